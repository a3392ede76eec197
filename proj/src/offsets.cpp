#include "fw/offsets.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "fw/checkpoint.hpp"
#include "fw/errors.hpp"
#include "fw/optim.hpp"

namespace fw {

namespace {

bool all_zero(const Tensor& t) {
    if (t.numel() == 0) return false;
    for (int i = 0; i < t.numel(); ++i)
        if (t.data()[i] != 0.0f) return false;
    return true;
}

const char* mode_name(OffsetMode mode) {
    return mode == OffsetMode::LowRank ? "lowrank" : "dense";
}

OffsetMode mode_from_name(const std::string& name) {
    if (name == "lowrank") return OffsetMode::LowRank;
    if (name == "dense") return OffsetMode::Dense;
    throw IoError("offset checkpoint: unknown mode \"" + name +
                  "\" (expected \"lowrank\" or \"dense\")");
}

// Reads an enum stored as its integer value, rejecting out-of-range entries
// instead of forging an invalid enum.
template <typename E>
E enum_from_meta(const nlohmann::json& meta, const char* key, int limit) {
    const int v = meta.at(key).get<int>();
    if (v < 0 || v >= limit) {
        std::ostringstream ss;
        ss << "offset checkpoint: field \"" << key << "\" holds " << v << ", outside [0, " << limit
           << ")";
        throw IoError(ss.str());
    }
    return static_cast<E>(v);
}

}  // namespace

int ConceptOffset::rank() const {
    if (mode != OffsetMode::LowRank || down.shape().size() != 2) return 0;
    return down.shape()[1];
}

void ConceptOffset::validate(int d_token) const {
    if (!std::isfinite(alpha))
        throw std::invalid_argument("concept offset: scale must be finite");
    if (mode == OffsetMode::Dense) {
        if (dense.shape() != Shape{d_token}) {
            std::ostringstream ss;
            ss << "concept offset: dense edit shape " << shape_str(dense.shape())
               << " does not match token width " << d_token;
            throw std::invalid_argument(ss.str());
        }
        return;
    }
    if (down.shape().size() != 2 || down.shape()[0] != d_token || down.shape()[1] < 1) {
        std::ostringstream ss;
        ss << "concept offset: down map shape " << shape_str(down.shape()) << " is not {"
           << d_token << ", rank}";
        throw std::invalid_argument(ss.str());
    }
    const int r = down.shape()[1];
    if (up.shape() != Shape{r, d_token}) {
        std::ostringstream ss;
        ss << "concept offset: up map shape " << shape_str(up.shape()) << " is not {" << r << ", "
           << d_token << "}";
        throw std::invalid_argument(ss.str());
    }
}

bool ConceptOffset::is_zero() const {
    if (mode == OffsetMode::Dense) return all_zero(dense);
    return all_zero(down) || all_zero(up);
}

Tensor offset_shift(const ConceptOffset& offset, const Tensor& e) {
    const int d_token = e.numel();
    offset.validate(d_token);
    if (e.shape().size() != 1) {
        std::ostringstream ss;
        ss << "offset_shift: embedding shape " << shape_str(e.shape()) << " is not a vector";
        throw std::invalid_argument(ss.str());
    }
    if (offset.mode == OffsetMode::Dense) return offset.dense;
    Tensor row = reshape(e, {1, d_token});
    Tensor through = matmul(matmul(row, offset.down), offset.up);
    return reshape(scale(through, offset.alpha / offset.rank()), {d_token});
}

Tensor apply_offset(const ConceptOffset& offset, const Tensor& e) {
    return add(e, offset_shift(offset, e));
}

// ---- one-shot learning --------------------------------------------------------

void OffsetTrainConfig::validate() const {
    if (mode == OffsetMode::LowRank && rank < 1) {
        std::ostringstream ss;
        ss << "offset training: low-rank mode needs rank >= 1, got " << rank;
        throw std::invalid_argument(ss.str());
    }
    if (!std::isfinite(alpha))
        throw std::invalid_argument("offset training: scale must be finite");
    if (!(std::isfinite(lr) && lr > 0.0)) {
        std::ostringstream ss;
        ss << "offset training: learning rate must be positive and finite, got " << lr;
        throw std::invalid_argument(ss.str());
    }
    if (steps < 1)
        throw std::invalid_argument("offset training: step count must be >= 1, got " +
                                    std::to_string(steps));
    if (batch < 1)
        throw std::invalid_argument("offset training: batch size must be >= 1, got " +
                                    std::to_string(batch));
    if (sampler.kind == TimestepSampler::Kind::StageWeighted) {
        if (!(sampler.in_stage_prob >= 0.0 && sampler.in_stage_prob <= 1.0)) {
            std::ostringstream ss;
            ss << "offset training: in-stage probability must lie in [0, 1], got "
               << sampler.in_stage_prob;
            throw std::invalid_argument(ss.str());
        }
        sampler.schedule.validate();
    }
}

OffsetTrainResult learn_offset(const VelocityNet& net, const ReferenceExample& ref,
                               const OffsetTrainConfig& config, const AugmentFn& augment) {
    config.validate();
    const NetDims& dims = net.dims;
    dims.validate();
    ref.prompt.validate(dims.vocab_size, dims.max_tokens);
    if (ref.image.shape() != Shape{dims.grid_h, dims.grid_w}) {
        std::ostringstream ss;
        ss << "offset learning: reference image shape " << shape_str(ref.image.shape())
           << " does not match the " << dims.grid_h << "x" << dims.grid_w << " grid";
        throw std::invalid_argument(ss.str());
    }
    if (ref.target_slot < 0 || ref.target_slot >= static_cast<int>(ref.prompt.tokens.size())) {
        std::ostringstream ss;
        ss << "offset learning: target slot " << ref.target_slot
           << " is unoccupied (prompt holds " << ref.prompt.tokens.size() << " tokens)";
        throw std::invalid_argument(ss.str());
    }
    const PromptToken target = ref.prompt.at_slot(ref.target_slot);
    if (target.index == 0)
        throw std::invalid_argument(
            "offset learning: target slot holds the null token; there is no embedding to "
            "personalize");

    // All updates land in the offset's own tensors; the net is a read-only view.
    const VelocityNet frozen = net.frozen();
    Rng rng(config.seed);

    OffsetTrainResult result;
    ConceptOffset& off = result.offset;
    off.mode = config.mode;
    off.alpha = config.alpha;
    off.role = target.role;
    off.target_stage = config.sampler.kind == TimestepSampler::Kind::StageWeighted
                           ? config.sampler.stage
                           : (target.role == TokenRole::Structural ? Stage::Blueprint
                                                                   : Stage::Instantiation);
    off.source_id = ref.source_id;
    off.train_seed = config.seed;

    // The zero-initialized half makes the starting edit the exact zero map,
    // so the first recorded loss is the frozen net's own.
    std::vector<Tensor> trainable;
    if (config.mode == OffsetMode::LowRank) {
        off.down = Tensor::xavier(dims.d_token, config.rank, rng);
        off.up = Tensor::zeros({config.rank, dims.d_token});
        off.down.set_requires_grad(true);
        off.up.set_requires_grad(true);
        trainable = {off.down, off.up};
    } else {
        off.dense = Tensor::zeros({dims.d_token});
        off.dense.set_requires_grad(true);
        trainable = {off.dense};
    }

    const Tensor base_embedding = token_embedding(frozen, target.index);
    Adam opt(trainable, AdamConfig{config.lr});
    result.loss_curve.reserve(static_cast<std::size_t>(config.steps));

    for (int step = 1; step <= config.steps; ++step) {
        Graph graph;
        // One edit expression per step, shared by every term in the batch;
        // gradients accumulate across its uses.
        Tensor delta = offset_shift(off, base_embedding);
        Tensor total;
        for (int b = 0; b < config.batch; ++b) {
            TrainExample ex =
                augment ? augment(rng) : TrainExample{ref.image, ref.prompt};
            ex.prompt.validate(dims.vocab_size, dims.max_tokens);
            if (ex.prompt.at_slot(ref.target_slot).index != target.index) {
                std::ostringstream ss;
                ss << "offset learning: augmentation changed the personalized token at slot "
                   << ref.target_slot << " (" << target.index << " -> "
                   << ex.prompt.at_slot(ref.target_slot).index << ")";
                throw std::invalid_argument(ss.str());
            }
            Tensor one =
                flow_loss(frozen, ex.image, ex.prompt, {{ref.target_slot, delta}}, config.sampler, rng);
            total = (b == 0) ? one : add(total, one);
        }
        Tensor loss = scale(total, 1.0 / config.batch);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            std::ostringstream ss;
            ss << "offset training diverged at step " << step << " (non-finite loss)";
            throw NumericError(ss.str());
        }
        graph.backward(loss);
        try {
            opt.step();
        } catch (const NumericError& e) {
            std::ostringstream ss;
            ss << "offset training diverged at step " << step << ": " << e.what();
            throw NumericError(ss.str());
        }
        result.loss_curve.push_back(value);
    }
    return result;
}

// ---- persistence ----------------------------------------------------------

void save_offset(const std::string& path, const ConceptOffset& offset) {
    Checkpoint ck;
    ck.kind = "offset";
    ck.meta = {
        {"mode", mode_name(offset.mode)},
        {"alpha", offset.alpha},
        {"role", static_cast<int>(offset.role)},
        {"target_stage", static_cast<int>(offset.target_stage)},
        {"source_id", offset.source_id},
        {"train_seed", offset.train_seed},
    };
    if (offset.mode == OffsetMode::LowRank) {
        ck.tensors = {{"down", offset.down}, {"up", offset.up}};
    } else {
        ck.tensors = {{"dense", offset.dense}};
    }
    save_checkpoint(path, ck);
}

ConceptOffset load_offset(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path, "offset");
    ConceptOffset off;
    try {
        off.mode = mode_from_name(ck.meta.at("mode").get<std::string>());
        off.alpha = ck.meta.at("alpha").get<double>();
        off.role = enum_from_meta<TokenRole>(ck.meta, "role", 3);
        off.target_stage = enum_from_meta<Stage>(ck.meta, "target_stage", 3);
        off.source_id = ck.meta.at("source_id").get<int>();
        off.train_seed = ck.meta.at("train_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("offset checkpoint " + path + ": bad metadata: " + e.what());
    }

    auto take = [&](const std::string& name) -> const Tensor& {
        for (const auto& [entry_name, tensor] : ck.tensors)
            if (entry_name == name) return tensor;
        throw IoError("offset checkpoint " + path + ": missing tensor \"" + name + "\"");
    };
    int d_token = 0;
    if (off.mode == OffsetMode::LowRank) {
        off.down = take("down");
        off.up = take("up");
        if (off.down.shape().size() != 2)
            throw IoError("offset checkpoint " + path + ": down map is not a matrix");
        d_token = off.down.shape()[0];
    } else {
        off.dense = take("dense");
        if (off.dense.shape().size() != 1)
            throw IoError("offset checkpoint " + path + ": dense edit is not a vector");
        d_token = off.dense.shape()[0];
    }
    try {
        off.validate(d_token);
    } catch (const std::invalid_argument& e) {
        throw IoError("offset checkpoint " + path + ": " + e.what());
    }
    return off;
}

}  // namespace fw
