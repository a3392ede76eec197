#pragma once
// Differential probing along sampling trajectories: drive the sampler with
// the guided field and, at every step, measure each selected concept's
// masking shift without touching the trajectory.  The shifts answer "what is
// this token doing right now" step by step, which a single end-to-end sample
// cannot.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fw/flow.hpp"
#include "fw/guidance.hpp"
#include "fw/net.hpp"
#include "fw/tensor.hpp"

namespace fw {

// Per-concept measurements at one sampling step.  The vectors run parallel
// to the probed selectors, in their original order.
struct ProbeStep {
    int step = 0;    // 1-based step index
    double t = 0.0;  // grid time entering the step
    std::vector<double> shift_norm;       // ‖Δv_i‖₂
    std::vector<double> normalized_norm;  // shift_norm / (‖Δv_prompt‖₂ + 1e-8)
    std::vector<double> localization;     // entropy localization of |Δv_i|
    std::vector<Tensor> heatmap;          // per-cell |Δv_i| grids
};

struct ProbeReport {
    std::vector<ProbeStep> steps;     // one record per sampling step
    std::vector<int> concept_tokens;  // probed vocabulary index per selector
    Prompt prompt;
    std::uint64_t seed = 0;
    std::string checkpoint_id;  // caller-supplied tag for the weights used
    Tensor sample;              // the trajectory endpoint
};

// 1 − H(p)/log N for p = per-cell |shift| normalized to a distribution:
// 0 for a uniform or all-zero field, 1 for a single hot cell.  A
// single-element field counts as perfectly localized when nonzero.
double localization_index(const Tensor& shift);

// Runs the guided sampler (the concept-weighted field, which reduces to
// plain prompt guidance when `guidance.concepts` is empty) and measures
// every selector's masking shift at each step.  The trajectory is
// bit-identical to an unprobed run with the same config: probing only adds
// extra field evaluations.  Throws std::invalid_argument for invalid
// selectors or duplicate probed tokens before any sampling work.
ProbeReport probe_trajectory(const VelocityNet& net, const Prompt& prompt,
                             const std::vector<ConceptSelector>& selectors,
                             const SamplerConfig& sampler, const GuidanceConfig& guidance);

// Stage attribution of one concept's influence curve.
struct ConceptStageStats {
    int concept_token = 0;
    int peak_step = 0;                       // 1-based argmax of shift_norm
    std::array<double, 3> stage_fraction{};  // Blueprint, Instantiation, Refinement
    Stage peak_stage = Stage::Blueprint;
};

struct StageSummary {
    std::vector<ConceptStageStats> concepts;
};

// Integrates each concept's curve by a trapezoidal sum over each stage's own
// step range, so a constant curve splits proportionally to stage step counts
// and an impulse lands entirely in its stage.  An all-zero curve has no mass
// to attribute and falls back to the step-count proportions.  Throws
// std::invalid_argument unless the report covers exactly the schedule's
// steps.
StageSummary summarize_stages(const ProbeReport& report, const StageSchedule& schedule);

// Writes one plain-text PGM per (concept, step) named
// probe_<token>_<step>.pgm plus curves.csv with header
// step,t,concept_id,shift_norm,normalized_norm,localization (one row per
// step and concept).  Each PGM carries its own value range, so the reported
// norms are recomputable from the files within quantization.  Returns the
// CSV path.
std::string export_heatmaps(const ProbeReport& report, const std::string& directory);

}  // namespace fw
