#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fw/checkpoint.hpp"
#include "fw/errors.hpp"
#include "fw/net.hpp"
#include "fw/offsets.hpp"
#include "fw/rng.hpp"
#include "fw/tensor.hpp"

using fw::Checkpoint;
using fw::ConceptOffset;
using fw::IoError;
using fw::NetDims;
using fw::OffsetMode;
using fw::Tensor;
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

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(bool(out));
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

// Hand-assembles a container around the given manifest and payload so the
// loader's structural validation can be exercised on malformed inputs that
// the writer refuses to produce.
void write_container(const std::string& path, const nlohmann::json& tensors,
                     const std::vector<float>& payload) {
    nlohmann::json header = {{"kind", "raw"},
                             {"version", 1},
                             {"meta", nlohmann::json::object()},
                             {"tensors", tensors}};
    const std::string text = header.dump();
    std::vector<char> bytes;
    bytes.insert(bytes.end(), {'F', 'W', 'V', '1'});
    const std::uint32_t len = std::uint32_t(text.size());
    const char* len_bytes = reinterpret_cast<const char*>(&len);
    bytes.insert(bytes.end(), len_bytes, len_bytes + 4);
    bytes.insert(bytes.end(), text.begin(), text.end());
    const char* data = reinterpret_cast<const char*>(payload.data());
    bytes.insert(bytes.end(), data, data + payload.size() * sizeof(float));
    write_bytes(path, bytes);
}

bool message_contains(const std::exception& e, const std::string& a, const std::string& b = "") {
    const std::string msg = e.what();
    return msg.find(a) != std::string::npos && (b.empty() || msg.find(b) != std::string::npos);
}

}  // namespace

TEST_CASE("network weights round-trip bitwise") {
    const std::string path = temp_path("fw_ck_net.fw");
    VelocityNet net = fw::init_net(small_dims(), 17);
    // Perturb a couple of entries away from their deterministic init so the
    // round trip is carrying real information.
    net.head_b.data()[0] = 0.125f;
    net.token_table.data()[9] = -3.5f;

    fw::save_net(path, net, {{"note", "fixture"}});
    VelocityNet loaded = fw::load_net(path);

    CHECK(loaded.dims.grid_h == net.dims.grid_h);
    CHECK(loaded.dims.vocab_size == net.dims.vocab_size);
    CHECK(loaded.dims.d_mlp == net.dims.d_mlp);

    auto a = net.named_params();
    auto b = loaded.named_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CAPTURE(a[i].first);
        CHECK(a[i].first == b[i].first);
        CHECK(fw::same_values(a[i].second, b[i].second));
    }
    CHECK(fw::same_values(net.pos_enc, loaded.pos_enc));
    std::filesystem::remove(path);
}

TEST_CASE("concept offsets round-trip bitwise with their metadata") {
    const std::string path = temp_path("fw_ck_offset.fw");
    fw::Rng rng(5);

    ConceptOffset low;
    low.mode = OffsetMode::LowRank;
    low.down = fw::randn({8, 4}, rng);
    low.up = fw::randn({4, 8}, rng);
    low.alpha = 16.5;
    low.role = fw::TokenRole::Structural;
    low.target_stage = fw::Stage::Blueprint;
    low.source_id = 7;
    low.train_seed = 99;

    fw::save_offset(path, low);
    ConceptOffset back = fw::load_offset(path);
    CHECK(back.mode == OffsetMode::LowRank);
    CHECK(fw::same_values(back.down, low.down));
    CHECK(fw::same_values(back.up, low.up));
    CHECK(back.alpha == 16.5);
    CHECK(back.role == fw::TokenRole::Structural);
    CHECK(back.target_stage == fw::Stage::Blueprint);
    CHECK(back.source_id == 7);
    CHECK(back.train_seed == 99);

    ConceptOffset dense;
    dense.mode = OffsetMode::Dense;
    dense.dense = fw::randn({8}, rng);
    dense.source_id = 2;
    fw::save_offset(path, dense);
    back = fw::load_offset(path);
    CHECK(back.mode == OffsetMode::Dense);
    CHECK(fw::same_values(back.dense, dense.dense));
    CHECK(back.source_id == 2);
    std::filesystem::remove(path);
}

TEST_CASE("the loader names expected and found values when rejecting") {
    const std::string path = temp_path("fw_ck_bad.fw");

    SUBCASE("wrong magic") {
        write_bytes(path, {'P', 'K', '\3', '\4', 0, 0, 0, 0, 0, 0});
        try {
            fw::load_checkpoint(path, "net");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "FWV1", "PK"));
        }
    }

    SUBCASE("kind mismatch") {
        ConceptOffset off;
        off.mode = OffsetMode::Dense;
        fw::Rng rng(1);
        off.dense = fw::randn({8}, rng);
        fw::save_offset(path, off);
        try {
            fw::load_checkpoint(path, "net");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "\"net\"", "\"offset\""));
        }
    }

    SUBCASE("version mismatch") {
        Checkpoint ck;
        ck.kind = "raw";
        ck.version = 9;
        ck.tensors = {{"x", Tensor::zeros({2})}};
        fw::save_checkpoint(path, ck);
        try {
            fw::load_checkpoint(path, "raw");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "expected 1", "found 9"));
        }
    }

    SUBCASE("truncation names byte counts") {
        Checkpoint ck;
        ck.kind = "raw";
        ck.tensors = {{"x", Tensor::full({4}, 2.0f)}};
        fw::save_checkpoint(path, ck);
        std::vector<char> bytes = read_bytes(path);

        // Cut inside the payload: the manifest still claims 16 bytes.
        std::vector<char> cut(bytes.begin(), bytes.end() - 9);
        write_bytes(path, cut);
        try {
            fw::load_checkpoint(path, "raw");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "16", "7"));
        }

        // Cut inside the header: its length prefix is no longer satisfiable.
        std::vector<char> stub(bytes.begin(), bytes.begin() + 12);
        write_bytes(path, stub);
        CHECK_THROWS_AS(fw::load_checkpoint(path, "raw"), IoError);

        // Cut inside the preamble.
        write_bytes(path, {'F', 'W'});
        try {
            fw::load_checkpoint(path, "raw");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "8-byte preamble", "2"));
        }
    }

    std::filesystem::remove(path);
}

TEST_CASE("manifests must tile the payload exactly") {
    const std::string path = temp_path("fw_ck_manifest.fw");
    const std::vector<float> payload(8, 1.0f);  // 32 bytes

    SUBCASE("a gap between entries is rejected") {
        write_container(path,
                        {{{"name", "a"}, {"shape", {4}}, {"offset", 0}},
                         {{"name", "b"}, {"shape", {3}}, {"offset", 20}}},
                        payload);
        try {
            fw::load_checkpoint(path, "raw");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "\"b\"", "expected 16"));
        }
    }

    SUBCASE("overlapping entries are rejected") {
        write_container(path,
                        {{{"name", "a"}, {"shape", {4}}, {"offset", 0}},
                         {{"name", "b"}, {"shape", {4}}, {"offset", 8}}},
                        payload);
        CHECK_THROWS_AS(fw::load_checkpoint(path, "raw"), IoError);
    }

    SUBCASE("an entry running past the payload is rejected") {
        write_container(path, {{{"name", "a"}, {"shape", {16}}, {"offset", 0}}}, payload);
        try {
            fw::load_checkpoint(path, "raw");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "64", "32"));
        }
    }

    SUBCASE("trailing unclaimed bytes are rejected") {
        write_container(path, {{{"name", "a"}, {"shape", {4}}, {"offset", 0}}}, payload);
        try {
            fw::load_checkpoint(path, "raw");
            FAIL("expected a rejection");
        } catch (const IoError& e) {
            CHECK(message_contains(e, "32", "16"));
        }
    }

    SUBCASE("a well-formed manifest loads") {
        write_container(path,
                        {{{"name", "a"}, {"shape", {4}}, {"offset", 0}},
                         {{"name", "b"}, {"shape", {2, 2}}, {"offset", 16}}},
                        payload);
        Checkpoint ck = fw::load_checkpoint(path, "raw");
        REQUIRE(ck.tensors.size() == 2);
        CHECK(ck.tensors[0].first == "a");
        CHECK(ck.tensors[1].second.shape() == fw::Shape{2, 2});
        CHECK(ck.tensors[1].second.data()[3] == 1.0f);
    }

    std::filesystem::remove(path);
}

TEST_CASE("the writer refuses unwritable checkpoints") {
    const std::string path = temp_path("fw_ck_writer.fw");

    Checkpoint no_kind;
    no_kind.tensors = {{"x", Tensor::zeros({1})}};
    CHECK_THROWS_AS(fw::save_checkpoint(path, no_kind), std::invalid_argument);

    Checkpoint dup;
    dup.kind = "raw";
    dup.tensors = {{"x", Tensor::zeros({1})}, {"x", Tensor::zeros({1})}};
    CHECK_THROWS_AS(fw::save_checkpoint(path, dup), std::invalid_argument);

    Checkpoint undefined;
    undefined.kind = "raw";
    undefined.tensors = {{"x", Tensor()}};
    CHECK_THROWS_AS(fw::save_checkpoint(path, undefined), std::invalid_argument);
}

TEST_CASE("offset checkpoints with mangled metadata are rejected") {
    const std::string path = temp_path("fw_ck_offmeta.fw");

    Checkpoint ck;
    ck.kind = "offset";
    ck.meta = {{"mode", "spiral"}, {"alpha", 1.0},      {"role", 1},
               {"target_stage", 1}, {"source_id", 0},   {"train_seed", 0}};
    ck.tensors = {{"dense", Tensor::zeros({4})}};
    fw::save_checkpoint(path, ck);
    try {
        fw::load_offset(path);
        FAIL("expected a rejection");
    } catch (const IoError& e) {
        CHECK(message_contains(e, "spiral"));
    }

    ck.meta["mode"] = "dense";
    ck.meta["role"] = 12;  // outside the role enum
    fw::save_checkpoint(path, ck);
    CHECK_THROWS_AS(fw::load_offset(path), IoError);

    ck.meta["role"] = 1;
    ck.tensors = {{"edit", Tensor::zeros({4})}};  // wrong tensor name
    fw::save_checkpoint(path, ck);
    try {
        fw::load_offset(path);
        FAIL("expected a rejection");
    } catch (const IoError& e) {
        CHECK(message_contains(e, "dense"));
    }

    std::filesystem::remove(path);
}
