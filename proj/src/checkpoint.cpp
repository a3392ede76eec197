#include "fw/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fw/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload I/O assumes a little-endian host");

namespace fw {

namespace {

constexpr char kMagic[4] = {'F', 'W', 'V', '1'};
constexpr int kFormatVersion = 1;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw IoError("checkpoint " + path + ": " + what);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    if (ck.kind.empty())
        throw std::invalid_argument("checkpoint kind must be non-empty");
    std::set<std::string> names;
    for (const auto& [name, tensor] : ck.tensors) {
        if (!names.insert(name).second)
            throw std::invalid_argument("checkpoint stores tensor \"" + name + "\" twice");
        if (!tensor.defined())
            throw std::invalid_argument("checkpoint tensor \"" + name + "\" is undefined");
    }

    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : ck.tensors) {
        manifest.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
        offset += std::uint64_t(tensor.numel()) * sizeof(float);
    }
    nlohmann::json header = {{"kind", ck.kind},
                             {"version", ck.version},
                             {"meta", ck.meta},
                             {"tensors", manifest}};
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path, "cannot open for writing");
    out.write(kMagic, 4);
    const std::uint32_t header_len = std::uint32_t(header_text.size());
    out.write(reinterpret_cast<const char*>(&header_len), 4);
    out.write(header_text.data(), std::streamsize(header_text.size()));
    for (const auto& [name, tensor] : ck.tensors)
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  std::streamsize(std::size_t(tensor.numel()) * sizeof(float)));
    out.close();
    if (!out) fail(path, "write failed");
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open for reading");
    in.seekg(0, std::ios::end);
    const std::uint64_t file_size = std::uint64_t(in.tellg());
    in.seekg(0);

    char magic[4];
    if (file_size < 8 || !in.read(magic, 4))
        fail(path, "file too short for the 8-byte preamble (" + std::to_string(file_size) +
                       " bytes)");
    if (std::memcmp(magic, kMagic, 4) != 0)
        fail(path, "bad magic: expected \"FWV1\", found \"" + std::string(magic, 4) + "\"");

    std::uint32_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 4);
    if (8 + std::uint64_t(header_len) > file_size)
        fail(path, "header claims " + std::to_string(header_len) + " bytes but only " +
                       std::to_string(file_size - 8) + " remain");

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        fail(path, std::string("header is not valid JSON: ") + e.what());
    }

    Checkpoint ck;
    try {
        ck.kind = header.at("kind").get<std::string>();
        if (ck.kind != expected_kind)
            fail(path, "kind mismatch: expected \"" + expected_kind + "\", found \"" + ck.kind +
                           "\"");
        ck.version = header.at("version").get<int>();
        if (ck.version != kFormatVersion)
            fail(path, "version mismatch: expected " + std::to_string(kFormatVersion) +
                           ", found " + std::to_string(ck.version));
        ck.meta = header.value("meta", nlohmann::json::object());

        const std::uint64_t payload_size = file_size - 8 - header_len;
        std::vector<char> payload(payload_size);
        in.read(payload.data(), std::streamsize(payload_size));
        if (!in)
            fail(path,
                 "payload truncated while reading " + std::to_string(payload_size) + " bytes");

        std::uint64_t expected_end = 0;
        for (const auto& entry : header.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const Shape shape = entry.at("shape").get<Shape>();
            const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
            std::uint64_t numel = 1;
            for (int d : shape) {
                if (d <= 0) fail(path, "tensor \"" + name + "\" has non-positive dimension");
                numel *= std::uint64_t(d);
            }
            const std::uint64_t bytes = numel * sizeof(float);
            // Entries must tile the payload in order: no gaps, overlaps, or
            // out-of-bounds reads.
            if (offset != expected_end)
                fail(path, "tensor \"" + name + "\" starts at byte " + std::to_string(offset) +
                               ", expected " + std::to_string(expected_end));
            if (offset + bytes > payload_size)
                fail(path, "tensor \"" + name + "\" needs bytes [" + std::to_string(offset) +
                               ", " + std::to_string(offset + bytes) + ") but payload holds " +
                               std::to_string(payload_size));
            expected_end = offset + bytes;

            std::vector<float> values(numel);
            std::memcpy(values.data(), payload.data() + offset, bytes);
            ck.tensors.emplace_back(name, Tensor::from(shape, std::move(values)));
        }
        if (expected_end != payload_size)
            fail(path, "payload holds " + std::to_string(payload_size) +
                           " bytes but manifest covers " + std::to_string(expected_end));
    } catch (const nlohmann::json::exception& e) {
        fail(path, std::string("bad header: ") + e.what());
    }
    return ck;
}

void save_net(const std::string& path, const VelocityNet& net, nlohmann::json extra_meta) {
    Checkpoint ck;
    ck.kind = "net";
    ck.meta = std::move(extra_meta);
    ck.meta["dims"] = {{"grid_h", net.dims.grid_h},     {"grid_w", net.dims.grid_w},
                       {"max_tokens", net.dims.max_tokens}, {"vocab_size", net.dims.vocab_size},
                       {"d_token", net.dims.d_token},   {"d_model", net.dims.d_model},
                       {"d_mlp", net.dims.d_mlp}};
    // named_params is non-const only because its tensors share storage with
    // the net; saving copies the bytes out.
    ck.tensors = const_cast<VelocityNet&>(net).named_params();
    save_checkpoint(path, ck);
}

VelocityNet load_net(const std::string& path) {
    Checkpoint ck = load_checkpoint(path, "net");
    NetDims dims;
    try {
        const nlohmann::json& d = ck.meta.at("dims");
        dims.grid_h = d.at("grid_h").get<int>();
        dims.grid_w = d.at("grid_w").get<int>();
        dims.max_tokens = d.at("max_tokens").get<int>();
        dims.vocab_size = d.at("vocab_size").get<int>();
        dims.d_token = d.at("d_token").get<int>();
        dims.d_model = d.at("d_model").get<int>();
        dims.d_mlp = d.at("d_mlp").get<int>();
    } catch (const nlohmann::json::exception& e) {
        fail(path, std::string("bad network dimensions in header: ") + e.what());
    }

    VelocityNet net = init_net(dims, 0);
    auto params = net.named_params();
    if (ck.tensors.size() != params.size())
        fail(path, "stores " + std::to_string(ck.tensors.size()) + " tensors, expected " +
                       std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [stored_name, stored] = ck.tensors[i];
        auto& [name, param] = params[i];
        if (stored_name != name)
            fail(path, "tensor " + std::to_string(i) + " is \"" + stored_name +
                           "\", expected \"" + name + "\"");
        if (stored.shape() != param.shape())
            fail(path, "tensor \"" + name + "\" has shape " + shape_str(stored.shape()) +
                           ", expected " + shape_str(param.shape()));
        std::memcpy(param.data(), stored.data(), std::size_t(param.numel()) * sizeof(float));
    }
    return net;
}

}  // namespace fw
