#pragma once
// The conditional velocity predictor: a small grid network with exactly one
// cross-attention block, so token conditioning flows through a single,
// inspectable key/value pathway.  Cells are queries; prompt tokens are keys
// and values; customization deltas are added to token embeddings on the
// key/value path only.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fw/flow.hpp"
#include "fw/rng.hpp"
#include "fw/tensor.hpp"

namespace fw {

// ---- prompts ----------------------------------------------------------------

enum class TokenRole { Filler, Structural, Content };

struct PromptToken {
    int index = 0;                       // vocabulary row; 0 is the reserved null token
    TokenRole role = TokenRole::Filler;
    int factor = -1;                     // dataset factor id, -1 for null/filler
    int value = -1;                      // factor value id, -1 when not applicable
};

// An ordered list of at most `max_tokens` slots; unoccupied slots read as the
// null token.  Slot order carries positional identity: the network is allowed
// to treat permuted prompts differently.
struct Prompt {
    std::vector<PromptToken> tokens;

    static Prompt null_prompt() { return {}; }
    bool is_null() const;
    // Token at `slot`, defaulting to the null token for unoccupied slots.
    PromptToken at_slot(int slot) const;
    // Copy with `slot` replaced by the null token.
    Prompt masked(int slot) const;
    // Throws std::invalid_argument: too many tokens, index out of range, or
    // two tokens claiming the same factor.
    void validate(int vocab_size, int max_tokens) const;
};

// ---- network ----------------------------------------------------------------

struct NetDims {
    int grid_h = 16;
    int grid_w = 16;
    int max_tokens = 4;
    int vocab_size = 18;
    int d_token = 32;
    int d_model = 64;
    int d_mlp = 128;

    int cells() const { return grid_h * grid_w; }
    void validate() const;
};

// A customization delta added to one prompt slot's token embedding before
// the key/value projections (queries come from grid cells and never touch
// token embeddings).  `delta` participates in autodiff, so offset training
// can differentiate through the injection.
struct TokenDelta {
    int slot = 0;
    Tensor delta;  // {d_token}
};

// Intermediate attention activations, captured on request.
struct AttnTrace {
    Tensor keys;     // {max_tokens, d_model}
    Tensor values;   // {max_tokens, d_model}
    Tensor weights;  // {cells, max_tokens}
};

struct VelocityNet {
    NetDims dims;

    Tensor token_table;            // {vocab_size, d_token}; row 0 pinned to zero
    Tensor cell_w, cell_b;         // cell value + position features -> d_model
    Tensor time_w, time_b;         // projection of the sinusoidal time features
    Tensor ln1_g, ln1_b;           // pre-attention norm
    Tensor q_w, q_b;               // {d_model, d_model}
    Tensor k_w;                    // {d_token, d_model}; no bias: a shared key
                                   // offset shifts every attention logit in a
                                   // row equally, which softmax cancels
    Tensor v_w, v_b;               // {d_token, d_model}
    Tensor out_w, out_b;           // attention output projection
    Tensor ln2_g, ln2_b;           // pre-MLP norm
    Tensor mlp1_w, mlp1_b;         // {d_model, d_mlp}
    Tensor mlp2_w, mlp2_b;         // {d_mlp, d_model}
    Tensor head_w, head_b;         // {d_model, 1}

    Tensor pos_enc;                // {cells, 16} constant position features

    mutable std::uint64_t eval_count = 0;  // forward passes, for evaluation-budget checks

    // Trainable parameters in a fixed, documented order (tensors share
    // storage with the net, so optimizers mutate the net in place).
    std::vector<std::pair<std::string, Tensor>> named_params();
    std::vector<Tensor> params();

    // A read-only view: same weights, nothing trainable.  Offset learning
    // runs against a frozen net so only the injected delta receives updates.
    VelocityNet frozen() const;
};

// Deterministic Xavier-uniform initialization; the null token row is zeroed
// and the output head is scaled down so the untrained field starts near zero.
VelocityNet init_net(const NetDims& dims, std::uint64_t seed);

// A token's base embedding, copied out of the vocabulary table as a plain
// (non-tracking) {d_token} vector.  Throws std::invalid_argument for indices
// outside the vocabulary.
Tensor token_embedding(const VelocityNet& net, int token_index);

// v = net(x_t, t, prompt [+ deltas on the K/V path]).  Output shape equals
// x_t's {grid_h, grid_w}.  With an all-null prompt the result depends on
// (x_t, t) only — that evaluation is the unconditional velocity.
Tensor predict_velocity(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                        const std::vector<TokenDelta>& offsets = {}, AttnTrace* trace = nullptr);

// Evaluation with an explicit key/value token list in place of the prompt's
// fixed slots.  The list length sets the attention row count, so a token
// absent from the list is genuinely out of the sequence — unlike a null
// token, whose row would still soak attention mass.  The list must be
// non-empty, at most max_tokens long, and hold valid vocabulary rows.
Tensor predict_velocity_tokens(const VelocityNet& net, const Tensor& x_t, double t,
                               const std::vector<int>& kv_tokens);

// ---- training ---------------------------------------------------------------

struct TrainExample {
    Tensor image;   // {grid_h, grid_w}
    Prompt prompt;
};

// One flow-matching term: draws x1 ~ N(0, I) and t from the sampler, then
// returns ‖net(x_t, t, prompt + offsets) − (x1 − x0)‖² (per-element mean) as
// a graph tensor, differentiable w.r.t. whatever currently tracks gradients.
Tensor flow_loss(const VelocityNet& net, const Tensor& x0, const Prompt& prompt,
                 const std::vector<TokenDelta>& offsets, const TimestepSampler& sampler, Rng& rng);

struct TrainConfig {
    int epochs = 8;
    int batch_size = 8;
    double lr = 1e-3;
    // Learning rate decays cosine-shaped to lr * final_lr_fraction over the
    // run; 1.0 keeps it constant.
    double final_lr_fraction = 0.05;
    std::uint64_t seed = 0;
};

// Minimizes the flow objective with uniform timestep sampling and no deltas;
// returns per-epoch mean losses.  Deterministic per seed.  Throws
// NumericError naming the epoch if the loss stops being finite.
std::vector<double> train_base(VelocityNet& net, const std::vector<TrainExample>& data,
                               const TrainConfig& cfg);

}  // namespace fw
