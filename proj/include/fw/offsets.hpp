#pragma once
// Concept-specific semantic offsets: small additive edits to one prompt
// token's embedding, learned from a single reference image against a frozen
// base net.  The offset is the unit of personalization — guidance consumes
// it, the offset trainer produces it, and checkpoints carry it.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fw/flow.hpp"
#include "fw/net.hpp"
#include "fw/tensor.hpp"

namespace fw {

// How the embedding edit is parameterized.  LowRank factors the edit through
// a bottleneck as an input-dependent map: Δe = (alpha/rank)·(e·down)·up.
// Dense stores the edit directly as a free vector: Δe independent of e.
enum class OffsetMode { LowRank, Dense };

struct ConceptOffset {
    OffsetMode mode = OffsetMode::Dense;

    // LowRank factors ({d_token, rank} and {rank, d_token}).
    Tensor down;
    Tensor up;
    double alpha = 32.0;

    // Dense edit vector ({d_token}).
    Tensor dense;

    // Provenance, carried through checkpoints and reports.
    TokenRole role = TokenRole::Content;
    Stage target_stage = Stage::Instantiation;
    int source_id = -1;
    std::uint64_t train_seed = 0;

    int rank() const;
    // Throws std::invalid_argument when the tensors stored do not form a
    // valid edit for a `d_token`-wide embedding (wrong shapes, rank < 1,
    // non-finite scale).
    void validate(int d_token) const;
    // True when the edit is provably the zero map (all-zero dense vector, or
    // an all-zero low-rank factor), so callers may skip evaluations without
    // changing results.
    bool is_zero() const;
};

// The edit itself: Δe as a {d_token} graph tensor.  Differentiable into the
// offset's factors (and `e`) when those track gradients, so offset training
// can run straight through it.
Tensor offset_shift(const ConceptOffset& offset, const Tensor& e);

// e + Δe.
Tensor apply_offset(const ConceptOffset& offset, const Tensor& e);

// ---- one-shot learning --------------------------------------------------------

// The sole supervision for offset learning: one clean image, the full prompt
// describing it, and the slot whose token the learned edit personalizes.
// `attribute` records the reference's exact factor value so later evaluation
// can score fidelity — scalar values occupy attribute[0] (stripe angle in
// degrees, shape id), planar ones both entries ({cx, cy}).  Training never
// reads it.
struct ReferenceExample {
    Tensor image;  // {grid_h, grid_w}
    Prompt prompt;
    int target_slot = 0;
    int source_id = -1;                   // caller-assigned id, carried into the offset
    std::array<double, 2> attribute{};    // evaluation bookkeeping only
};

// Produces one training variant of the reference per call (mirrored,
// jittered, …) with its prompt recomputed to match the altered scene.  The
// personalized attribute — and therefore the token at the target slot — must
// survive every variant; the learner checks this and rejects augmenters that
// break it.  A null function trains on the reference as-is.  Fresh noise and
// timesteps are drawn per term either way.
using AugmentFn = std::function<TrainExample(Rng&)>;

struct OffsetTrainConfig {
    OffsetMode mode = OffsetMode::LowRank;
    int rank = 16;        // LowRank bottleneck width
    double alpha = 32.0;  // LowRank scale, applied as alpha/rank
    double lr = 1e-4;
    int steps = 2000;
    int batch = 4;  // flow-matching terms averaged per update
    TimestepSampler sampler = TimestepSampler::stage_weighted(Stage::Instantiation);
    std::uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

struct OffsetTrainResult {
    ConceptOffset offset;
    std::vector<double> loss_curve;  // one mean loss per update step
};

// Learns one concept's embedding edit from the single reference against a
// frozen copy of `net`: each update averages `batch` flow-matching terms on
// augmented, freshly re-noised copies of the reference, and steps only the
// offset's own tensors.  Low-rank offsets start as the exact zero map (up
// factor zeroed), dense offsets as the zero vector, so the first recorded
// loss is the frozen net's own.  Deterministic per config.seed; the base net
// is never modified.  Throws std::invalid_argument for a malformed reference
// (bad image shape, target slot unoccupied or holding the null token) and
// NumericError naming the step when the loss stops being finite.
OffsetTrainResult learn_offset(const VelocityNet& net, const ReferenceExample& ref,
                               const OffsetTrainConfig& config,
                               const AugmentFn& augment = nullptr);

// Offset checkpoints: the edit's tensors plus the metadata needed to reapply
// it, in the shared container format under kind "offset".  Round-trips are
// bit-exact; kind or version mismatches are rejected naming both values.
void save_offset(const std::string& path, const ConceptOffset& offset);
ConceptOffset load_offset(const std::string& path);

}  // namespace fw
