#include "fw/guidance.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fw {

namespace {

void check_scale(double w) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
        std::ostringstream ss;
        ss << "guidance scale " << w << " must be a finite non-negative number";
        throw std::invalid_argument(ss.str());
    }
}

}  // namespace

void validate_concept_slot(const Prompt& prompt, const NetDims& dims, int slot) {
    if (slot < 0 || slot >= dims.max_tokens) {
        std::ostringstream ss;
        ss << "concept slot " << slot << " outside prompt capacity " << dims.max_tokens;
        throw std::invalid_argument(ss.str());
    }
    if (slot >= int(prompt.tokens.size())) {
        std::ostringstream ss;
        ss << "concept slot " << slot << " targets an unoccupied slot of a prompt with "
           << prompt.tokens.size() << " tokens";
        throw std::invalid_argument(ss.str());
    }
}

namespace {

bool exactly_zero(const Tensor& t) {
    for (int i = 0; i < t.numel(); ++i)
        if (t.data()[i] != 0.0f) return false;
    return true;
}

// Both blended-field entry points run through here so their agreement is a
// property of shared code, not of reproduced arithmetic.  `conditional` is
// filled (and `have_conditional` set) whenever the conditional field was
// needed anyway or `want_conditional` asks for it.
struct BaseField {
    Tensor combined;
    Tensor conditional;
    bool have_conditional = false;
};

BaseField blend(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                double w, bool want_conditional) {
    BaseField out;
    if (prompt.is_null()) {
        // Conditional and unconditional fields coincide; one evaluation.
        out.combined = predict_velocity(net, x_t, t, prompt);
        out.conditional = out.combined;
        out.have_conditional = true;
        return out;
    }
    if (w == 1.0) {
        out.combined = predict_velocity(net, x_t, t, prompt);
        out.conditional = out.combined;
        out.have_conditional = true;
        return out;
    }
    if (w == 0.0) {
        out.combined = predict_velocity(net, x_t, t, Prompt::null_prompt());
        if (want_conditional) {
            out.conditional = predict_velocity(net, x_t, t, prompt);
            out.have_conditional = true;
        }
        return out;
    }
    Tensor v_null = predict_velocity(net, x_t, t, Prompt::null_prompt());
    Tensor v_cond = predict_velocity(net, x_t, t, prompt);
    out.combined = add(v_null, scale(sub(v_cond, v_null), w));
    out.conditional = v_cond;
    out.have_conditional = true;
    return out;
}

}  // namespace

std::array<double, 3> default_stage_weights(TokenRole role) {
    switch (role) {
        case TokenRole::Structural:
            return {5.0, 1.0, 0.0};
        case TokenRole::Content:
            return {0.0, 8.0, 3.0};
        case TokenRole::Filler:
            break;
    }
    return {0.0, 0.0, 0.0};
}

void GuidanceConfig::validate(const Prompt& prompt, const NetDims& dims) const {
    check_scale(w);
    schedule.validate();
    for (const ConceptGuidance& c : concepts) {
        validate_concept_slot(prompt, dims, c.slot);
        c.offset.validate(dims.d_token);
        for (double sw : c.stage_weights) {
            if (!std::isfinite(sw)) {
                std::ostringstream ss;
                ss << "stage weight " << sw << " for concept slot " << c.slot
                   << " must be finite";
                throw std::invalid_argument(ss.str());
            }
        }
    }
}

Tensor prompt_shift(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt) {
    prompt.validate(net.dims.vocab_size, net.dims.max_tokens);
    if (prompt.is_null()) return Tensor::zeros({net.dims.grid_h, net.dims.grid_w});
    Tensor v_cond = predict_velocity(net, x_t, t, prompt);
    Tensor v_null = predict_velocity(net, x_t, t, Prompt::null_prompt());
    return sub(v_cond, v_null);
}

Tensor cfg_velocity(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                    double w) {
    check_scale(w);
    prompt.validate(net.dims.vocab_size, net.dims.max_tokens);
    return blend(net, x_t, t, prompt, w, /*want_conditional=*/false).combined;
}

Tensor concept_shift(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                     const ConceptSelector& sel, MaskMode mode) {
    prompt.validate(net.dims.vocab_size, net.dims.max_tokens);
    validate_concept_slot(prompt, net.dims, sel.slot);
    if (mode == MaskMode::ZeroEmbedding && prompt.at_slot(sel.slot).index == 0) {
        // Replacing an explicit null token with the null token changes
        // nothing: the shift is zero by construction, with no evaluations.
        // (Dropping the slot's attention row entirely is still a real edit.)
        return Tensor::zeros(x_t.shape());
    }
    Tensor v_full = predict_velocity(net, x_t, t, prompt);
    Tensor v_masked;
    if (mode == MaskMode::ZeroEmbedding) {
        v_masked = predict_velocity(net, x_t, t, prompt.masked(sel.slot));
    } else {
        std::vector<int> kept;
        for (int s = 0; s < net.dims.max_tokens; ++s)
            if (s != sel.slot) kept.push_back(prompt.at_slot(s).index);
        v_masked = predict_velocity_tokens(net, x_t, t, kept);
    }
    return sub(v_full, v_masked);
}

Tensor reference_shift(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                       const ConceptGuidance& entry) {
    prompt.validate(net.dims.vocab_size, net.dims.max_tokens);
    validate_concept_slot(prompt, net.dims, entry.slot);
    entry.offset.validate(net.dims.d_token);
    if (entry.offset.is_zero()) return Tensor::zeros({net.dims.grid_h, net.dims.grid_w});
    Tensor delta = offset_shift(entry.offset, token_embedding(net, prompt.at_slot(entry.slot).index));
    if (exactly_zero(delta)) return Tensor::zeros({net.dims.grid_h, net.dims.grid_w});
    Tensor v_shifted = predict_velocity(net, x_t, t, prompt, {{entry.slot, delta}});
    Tensor v_base = predict_velocity(net, x_t, t, prompt);
    return sub(v_shifted, v_base);
}

Tensor cwg_velocity(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                    const GuidanceConfig& config) {
    config.validate(prompt, net.dims);
    prompt.validate(net.dims.vocab_size, net.dims.max_tokens);
    const Stage stage = config.schedule.of_time(t);

    // A concept contributes only when its weight for the current stage is
    // nonzero and its offset is not the zero map; everything else is skipped
    // before any evaluation is spent.  Skipping is exact: a zero weight
    // scales the term away and a zero offset makes the two evaluations of a
    // deterministic forward identical.
    std::vector<const ConceptGuidance*> active;
    for (const ConceptGuidance& c : config.concepts)
        if (c.stage_weights[static_cast<int>(stage)] != 0.0 && !c.offset.is_zero())
            active.push_back(&c);

    BaseField base = blend(net, x_t, t, prompt, config.w, /*want_conditional=*/!active.empty());
    Tensor out = base.combined;
    for (const ConceptGuidance* c : active) {
        Tensor delta = offset_shift(c->offset, token_embedding(net, prompt.at_slot(c->slot).index));
        // A low-rank offset applied to the null token's zero embedding maps
        // to an exactly-zero shift; skip the two evaluations it would waste.
        if (exactly_zero(delta)) continue;
        Tensor v_shifted = predict_velocity(net, x_t, t, prompt, {{c->slot, delta}});
        out = add(out, scale(sub(v_shifted, base.conditional), c->stage_weights[static_cast<int>(stage)]));
    }
    return out;
}

}  // namespace fw
