#pragma once
// Guidance algebra over the learned velocity field: the conditional/
// unconditional blend, per-token differential shifts, reference-offset
// shifts, and the stage-gated combination that injects each concept's offset
// only during the trajectory phase where that concept is being decided.

#include <array>
#include <vector>

#include "fw/flow.hpp"
#include "fw/net.hpp"
#include "fw/offsets.hpp"
#include "fw/tensor.hpp"

namespace fw {

// Picks one prompt slot for differential probing.  The slot must hold a
// non-null token: masking the null token is a no-op and is rejected.
struct ConceptSelector {
    int slot = 0;
};

// How a token is removed when building the partially-masked prompt.
// ZeroEmbedding replaces it with the null token, so its key/value row stays
// in the attention but reads as the zero embedding.  DropToken removes the
// row entirely, shortening the key/value list and renormalizing attention
// over the remaining rows.  These are different operations; nothing assumes
// they agree.
enum class MaskMode { ZeroEmbedding, DropToken };

// One personalized concept inside a guidance run: which prompt slot it
// rides on, the learned offset, and how strongly it is injected in each
// trajectory stage (indexed Blueprint, Instantiation, Refinement).
struct ConceptGuidance {
    int slot = 0;
    ConceptOffset offset;
    std::array<double, 3> stage_weights{0.0, 0.0, 0.0};
};

// Stage weights that switch a concept on where its kind of decision is
// made: content concepts act in the middle of the trajectory, structural
// concepts at the start.
std::array<double, 3> default_stage_weights(TokenRole role);

struct GuidanceConfig {
    double w = 3.0;  // prompt guidance scale
    std::vector<ConceptGuidance> concepts;
    StageSchedule schedule{};

    // Throws std::invalid_argument: negative/non-finite w, non-finite stage
    // weights, a concept slot outside the prompt capacity or unoccupied, or
    // a malformed offset.
    void validate(const Prompt& prompt, const NetDims& dims) const;
};

// Throws std::invalid_argument unless `slot` addresses an occupied slot of
// the prompt.  An occupied slot may carry the null token explicitly; its
// masking shift is then exactly zero.
void validate_concept_slot(const Prompt& prompt, const NetDims& dims, int slot);

// v(c) − v(c_∅): how the full prompt moves the field.  Exactly zero (with no
// net evaluations) for the all-null prompt.
Tensor prompt_shift(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt);

// v_∅ + w·(v(c) − v_∅).  w = 1 returns the conditional field itself and
// w = 0 the unconditional one, each from a single evaluation, so those
// identities hold bit-exactly; an all-null prompt collapses to the
// unconditional field for every w.
Tensor cfg_velocity(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                    double w);

// v(c) − v(c_{−i}): the part of the prompt shift attributable to slot i,
// with c_{−i} built per `mode`.  Rejects selectors that point at a null
// token.
Tensor concept_shift(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                     const ConceptSelector& sel, MaskMode mode = MaskMode::ZeroEmbedding);

// v(c + Δe at the entry's slot) − v(c): how the learned offset moves the
// field on top of the unedited prompt.  A provably zero offset returns the
// zero tensor without evaluating the net.
Tensor reference_shift(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                       const ConceptGuidance& entry);

// The full guided field:
//   v_∅ + w·(v(c) − v_∅) + Σ_i w_i[stage(t)]·(v(c + Δe_i) − v(c))
// with concepts summed in declaration order.  The base term reuses the
// cfg_velocity code path, so an empty (or everywhere-zero-weight) concept
// list reproduces cfg_velocity bit-exactly; concepts whose weight for the
// current stage is zero are skipped without their extra net evaluation.
Tensor cwg_velocity(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                    const GuidanceConfig& config);

}  // namespace fw
