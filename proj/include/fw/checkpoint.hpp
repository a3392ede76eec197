#pragma once
// Single-file persistence: a fixed magic, a length-prefixed JSON header
// naming the stored tensors, then their raw 32-bit-real payload.  One
// container serves every artifact kind (network weights, concept offsets);
// the `kind` tag keeps loaders from quietly accepting the wrong one.
//
// Layout: "FWV1" | u32 little-endian header length | header JSON | payload.
// The header holds {kind, version, meta, tensors: [{name, shape, offset}]},
// offsets in bytes into the payload, entries stored in manifest order.

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "fw/net.hpp"
#include "fw/tensor.hpp"

namespace fw {

struct Checkpoint {
    std::string kind;  // e.g. "net", "offset"
    int version = 1;
    nlohmann::json meta = nlohmann::json::object();  // dims, seeds, free-form
    std::vector<std::pair<std::string, Tensor>> tensors;
};

// Writes the container; float payload is copied byte-exact, so a later load
// reproduces every tensor bitwise.  Throws IoError on I/O failure,
// std::invalid_argument on an unwritable checkpoint (empty kind or
// duplicate tensor names).
void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Reads and validates a container.  Rejections throw IoError naming both the
// expected and found value: wrong magic, unknown format version,
// header/payload truncation, kind mismatch, manifests whose entries leave
// gaps, overlap, or run past the payload.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_kind);

// Network persistence on top of the container: stores dims plus every named
// parameter; loading rebuilds the deterministic constants (position
// features, zero null-token row) from dims and then overwrites all
// parameters, so load(save(net)) is bit-identical.
void save_net(const std::string& path, const VelocityNet& net,
              nlohmann::json extra_meta = nlohmann::json::object());
VelocityNet load_net(const std::string& path);

}  // namespace fw
