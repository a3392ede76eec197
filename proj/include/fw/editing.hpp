#pragma once
// Prompt-driven editing of an existing image without regenerating it from
// noise: inside a window of trajectory steps, the source is freshly
// re-noised, a customized target branch and a plain source branch evaluate
// the same noisy state (displaced by the edit so far), and only their
// velocity difference is integrated.  Identical branches therefore cancel
// exactly, and everything outside the window passes through untouched.

#include <cstdint>

#include <json.hpp>

#include "fw/guidance.hpp"
#include "fw/net.hpp"
#include "fw/tensor.hpp"

namespace fw {

struct EditConfig {
    Prompt source_prompt;  // what the source image shows
    Prompt target_prompt;  // what the edit should show instead

    // Target-branch field: prompt scale, concept offsets with their stage
    // weights, and the step schedule that also fixes the step size.
    GuidanceConfig guidance;
    // Source-branch prompt scale (the source branch never sees offsets).
    double source_w = 3.0;

    // 1-based, inclusive step window on the schedule's grid; step j runs at
    // t = (num_steps - j + 1)/num_steps.  first > last means an empty window.
    int window_first = 15;
    int window_last = 25;

    std::uint64_t seed = 0;

    // Throws std::invalid_argument: window bounds outside the schedule,
    // invalid prompts, or a guidance config that does not fit the target
    // prompt.
    void validate(const NetDims& dims) const;
};

// Integrates the branch-velocity difference over the edit window, starting
// from the source image.  Each step's noise depends only on (seed, step), so
// a window sweep sees identical draws at shared steps.  Matching branches —
// same prompt, same scale, no active offsets — return the source bit-exactly.
// Throws NumericError naming the step on a non-finite update.
Tensor flow_edit(const VelocityNet& net, const Tensor& x_src, const EditConfig& config);

// Factor-level before/after comparison: decodes position, stripe angle, and
// shape for both images and records the L2 change plus the position drift
// (the structure-preservation score, null when either position is
// undecodable).  Serializes as one JSON object.
nlohmann::json edit_report(const Tensor& source, const Tensor& edited);

}  // namespace fw
