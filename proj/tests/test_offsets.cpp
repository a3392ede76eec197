#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "fw/errors.hpp"
#include "fw/net.hpp"
#include "fw/offsets.hpp"
#include "fw/rng.hpp"
#include "fw/tensor.hpp"

using fw::ConceptOffset;
using fw::NetDims;
using fw::OffsetMode;
using fw::OffsetTrainConfig;
using fw::OffsetTrainResult;
using fw::Prompt;
using fw::PromptToken;
using fw::ReferenceExample;
using fw::Stage;
using fw::Tensor;
using fw::TimestepSampler;
using fw::TokenRole;
using fw::VelocityNet;

namespace {

NetDims small_dims() {
    NetDims d;
    d.grid_h = 4;
    d.grid_w = 4;
    d.max_tokens = 3;
    d.vocab_size = 6;
    d.d_token = 8;
    d.d_model = 16;
    d.d_mlp = 24;
    return d;
}

ReferenceExample small_reference(std::uint64_t seed = 20) {
    ReferenceExample ref;
    fw::Rng rng(seed);
    ref.image = fw::randn({4, 4}, rng);
    ref.prompt.tokens = {PromptToken{1, TokenRole::Structural, 0, 0},
                         PromptToken{3, TokenRole::Content, 1, 1}};
    ref.target_slot = 1;
    ref.source_id = 4;
    return ref;
}

OffsetTrainConfig quick_config() {
    OffsetTrainConfig cfg;
    cfg.rank = 2;
    cfg.alpha = 4.0;
    cfg.lr = 1e-2;
    cfg.steps = 6;
    cfg.batch = 2;
    cfg.sampler = TimestepSampler::uniform();
    cfg.seed = 9;
    return cfg;
}

std::vector<std::vector<float>> snapshot(VelocityNet& net) {
    std::vector<std::vector<float>> out;
    for (auto& [name, t] : net.named_params())
        out.emplace_back(t.data(), t.data() + t.numel());
    return out;
}

}  // namespace

TEST_CASE("learning is deterministic and never touches the base net") {
    VelocityNet net = fw::init_net(small_dims(), 3);
    const auto before = snapshot(net);
    const ReferenceExample ref = small_reference();
    const OffsetTrainConfig cfg = quick_config();

    OffsetTrainResult a = fw::learn_offset(net, ref, cfg);
    OffsetTrainResult b = fw::learn_offset(net, ref, cfg);

    CHECK(fw::same_values(a.offset.down, b.offset.down));
    CHECK(fw::same_values(a.offset.up, b.offset.up));
    REQUIRE(a.loss_curve.size() == 6);
    CHECK(a.loss_curve == b.loss_curve);
    for (double v : a.loss_curve) CHECK(std::isfinite(v));

    // The trained edit is attached to the content token it personalizes.
    CHECK(a.offset.mode == OffsetMode::LowRank);
    CHECK(a.offset.rank() == 2);
    CHECK(a.offset.alpha == 4.0);
    CHECK(a.offset.role == TokenRole::Content);
    CHECK(a.offset.source_id == 4);
    CHECK(a.offset.train_seed == 9);

    // Frozen means frozen: every parameter of the base net is bit-identical.
    const auto after = snapshot(net);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CAPTURE(i);
        CHECK(std::memcmp(before[i].data(), after[i].data(),
                          before[i].size() * sizeof(float)) == 0);
    }

    // A different seed trains a different edit.
    OffsetTrainConfig other = cfg;
    other.seed = 10;
    OffsetTrainResult c = fw::learn_offset(net, ref, other);
    CHECK_FALSE(fw::same_values(a.offset.up, c.offset.up));
    CHECK(c.offset.train_seed == 10);
}

TEST_CASE("low-rank edits start as the exact zero map") {
    // With the up factor zeroed, the first update's loss must equal the
    // frozen net's own objective on the same draws.  Dense mode consumes no
    // randomness before the loop, so the stream can be replayed exactly.
    VelocityNet net = fw::init_net(small_dims(), 3);
    const ReferenceExample ref = small_reference();

    OffsetTrainConfig cfg;
    cfg.mode = OffsetMode::Dense;
    cfg.steps = 1;
    cfg.batch = 3;
    cfg.lr = 1e-3;
    cfg.sampler = TimestepSampler::uniform();
    cfg.seed = 123;
    OffsetTrainResult r = fw::learn_offset(net, ref, cfg);
    REQUIRE(r.loss_curve.size() == 1);

    const VelocityNet frozen = net.frozen();
    fw::Rng rng(123);
    fw::Graph graph;
    Tensor total;
    for (int b = 0; b < 3; ++b) {
        Tensor one = fw::flow_loss(frozen, ref.image, ref.prompt, {}, cfg.sampler, rng);
        total = (b == 0) ? one : fw::add(total, one);
    }
    const double plain = fw::scale(total, 1.0 / 3).item();
    CHECK(r.loss_curve[0] == plain);

    // LowRank starts at zero too; one step must leave it a usable, non-zero
    // edit whose starting loss was likewise finite.
    OffsetTrainConfig low = quick_config();
    low.steps = 1;
    OffsetTrainResult l = fw::learn_offset(net, ref, low);
    CHECK(l.offset.down.shape() == fw::Shape{8, 2});
    CHECK(l.offset.up.shape() == fw::Shape{2, 8});
    CHECK(std::isfinite(l.loss_curve[0]));
}

TEST_CASE("training moves the loss down on a fixed seed") {
    VelocityNet net = fw::init_net(small_dims(), 3);
    const ReferenceExample ref = small_reference();

    OffsetTrainConfig cfg;
    cfg.mode = OffsetMode::LowRank;
    cfg.rank = 4;
    cfg.alpha = 8.0;
    cfg.lr = 3e-2;
    cfg.steps = 80;
    cfg.batch = 4;
    cfg.sampler = TimestepSampler::uniform();
    cfg.seed = 31;

    OffsetTrainResult r = fw::learn_offset(net, ref, cfg);
    REQUIRE(r.loss_curve.size() == 80);
    const auto mean = [](auto first, auto last) {
        return std::accumulate(first, last, 0.0) / double(last - first);
    };
    const double head = mean(r.loss_curve.begin(), r.loss_curve.begin() + 10);
    const double tail = mean(r.loss_curve.end() - 10, r.loss_curve.end());
    CHECK(tail < head);
    CHECK_FALSE(r.offset.is_zero());

    // Dense mode trains too.
    OffsetTrainConfig dense = cfg;
    dense.mode = OffsetMode::Dense;
    OffsetTrainResult d = fw::learn_offset(net, ref, dense);
    const double dhead = mean(d.loss_curve.begin(), d.loss_curve.begin() + 10);
    const double dtail = mean(d.loss_curve.end() - 10, d.loss_curve.end());
    CHECK(dtail < dhead);
    CHECK_FALSE(d.offset.is_zero());
}

TEST_CASE("augmentation feeds the learner and token swaps are rejected") {
    VelocityNet net = fw::init_net(small_dims(), 3);
    const ReferenceExample ref = small_reference();
    OffsetTrainConfig cfg = quick_config();

    // A legitimate augmenter: perturbs the image, keeps the prompt.
    fw::AugmentFn jitter = [&ref](fw::Rng& rng) {
        Tensor noise = fw::randn({4, 4}, rng);
        std::vector<float> v(std::size_t(ref.image.numel()));
        for (int i = 0; i < ref.image.numel(); ++i)
            v[std::size_t(i)] = ref.image.data()[i] + 0.1f * noise.data()[i];
        return fw::TrainExample{Tensor::from({4, 4}, std::move(v)), ref.prompt};
    };
    OffsetTrainResult a = fw::learn_offset(net, ref, cfg, jitter);
    OffsetTrainResult b = fw::learn_offset(net, ref, cfg, jitter);
    CHECK(fw::same_values(a.offset.up, b.offset.up));

    // Augmented copies see different draws than the plain reference run.
    OffsetTrainResult plain = fw::learn_offset(net, ref, cfg);
    CHECK_FALSE(fw::same_values(a.offset.up, plain.offset.up));

    // An augmenter that changes the personalized token is a bug; say so.
    fw::AugmentFn swapper = [&ref](fw::Rng&) {
        Prompt p = ref.prompt;
        p.tokens[1].index = 4;
        return fw::TrainExample{ref.image, p};
    };
    CHECK_THROWS_WITH_AS(fw::learn_offset(net, ref, cfg, swapper),
                         doctest::Contains("changed the personalized token"),
                         std::invalid_argument);
}

TEST_CASE("divergence aborts naming the step") {
    VelocityNet net = fw::init_net(small_dims(), 3);
    const ReferenceExample ref = small_reference();
    OffsetTrainConfig cfg = quick_config();
    // Adam's first update has magnitude ~lr, so this drives the edit far
    // enough that squaring the prediction overflows to infinity.
    cfg.lr = 1e25;
    cfg.steps = 50;
    CHECK_THROWS_WITH_AS(fw::learn_offset(net, ref, cfg),
                         doctest::Contains("diverged at step"), fw::NumericError);
}

TEST_CASE("bad configurations and references are refused up front") {
    VelocityNet net = fw::init_net(small_dims(), 3);
    const ReferenceExample ref = small_reference();
    const OffsetTrainConfig good = quick_config();

    OffsetTrainConfig bad = good;
    bad.steps = 0;
    CHECK_THROWS_AS(fw::learn_offset(net, ref, bad), std::invalid_argument);
    bad = good;
    bad.batch = 0;
    CHECK_THROWS_AS(fw::learn_offset(net, ref, bad), std::invalid_argument);
    bad = good;
    bad.rank = 0;
    CHECK_THROWS_AS(fw::learn_offset(net, ref, bad), std::invalid_argument);
    bad = good;
    bad.lr = -1.0;
    CHECK_THROWS_AS(fw::learn_offset(net, ref, bad), std::invalid_argument);

    ReferenceExample wrong = ref;
    fw::Rng rng(1);
    wrong.image = fw::randn({5, 4}, rng);
    CHECK_THROWS_WITH_AS(fw::learn_offset(net, wrong, good), doctest::Contains("image shape"),
                         std::invalid_argument);

    wrong = ref;
    wrong.target_slot = 2;  // prompt holds two tokens
    CHECK_THROWS_WITH_AS(fw::learn_offset(net, wrong, good), doctest::Contains("unoccupied"),
                         std::invalid_argument);

    wrong = ref;
    wrong.prompt.tokens[1] = PromptToken{0, TokenRole::Filler, -1, -1};
    CHECK_THROWS_WITH_AS(fw::learn_offset(net, wrong, good), doctest::Contains("null token"),
                         std::invalid_argument);
}

TEST_CASE("the trained edit's stage follows the sampling policy") {
    VelocityNet net = fw::init_net(small_dims(), 3);
    ReferenceExample ref = small_reference();
    OffsetTrainConfig cfg = quick_config();
    cfg.steps = 1;

    cfg.sampler = TimestepSampler::stage_weighted(Stage::Blueprint);
    CHECK(fw::learn_offset(net, ref, cfg).offset.target_stage == Stage::Blueprint);

    cfg.sampler = TimestepSampler::stage_weighted(Stage::Refinement);
    CHECK(fw::learn_offset(net, ref, cfg).offset.target_stage == Stage::Refinement);

    // Without a stage-weighted sampler the edit defaults to where its
    // token's kind of decision is made.
    cfg.sampler = TimestepSampler::uniform();
    CHECK(fw::learn_offset(net, ref, cfg).offset.target_stage == Stage::Instantiation);
    ref.target_slot = 0;  // the structural token
    CHECK(fw::learn_offset(net, ref, cfg).offset.target_stage == Stage::Blueprint);
    CHECK(fw::learn_offset(net, ref, cfg).offset.role == TokenRole::Structural);
}
