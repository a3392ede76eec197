#include "fw/net.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fw/errors.hpp"
#include "fw/optim.hpp"

namespace fw {

namespace {

constexpr int kPosFeatures = 16;  // 4 frequencies x sin/cos x 2 axes

Tensor build_pos_enc(int h, int w) {
    Tensor enc = Tensor::zeros({h * w, kPosFeatures});
    const double freqs[4] = {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4};  // cycles per cell
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            float* row = enc.data() + static_cast<std::size_t>(r * w + c) * kPosFeatures;
            int f = 0;
            for (double fr : freqs) {
                row[f++] = static_cast<float>(std::sin(2.0 * M_PI * fr * r));
                row[f++] = static_cast<float>(std::cos(2.0 * M_PI * fr * r));
                row[f++] = static_cast<float>(std::sin(2.0 * M_PI * fr * c));
                row[f++] = static_cast<float>(std::cos(2.0 * M_PI * fr * c));
            }
        }
    }
    return enc;
}

}  // namespace

// ---- prompts ----------------------------------------------------------------

bool Prompt::is_null() const {
    return std::all_of(tokens.begin(), tokens.end(),
                       [](const PromptToken& t) { return t.index == 0; });
}

PromptToken Prompt::at_slot(int slot) const {
    if (slot < 0) throw std::invalid_argument("prompt slot must be non-negative");
    if (slot < static_cast<int>(tokens.size())) return tokens[slot];
    return PromptToken{};
}

Prompt Prompt::masked(int slot) const {
    Prompt out = *this;
    if (slot < 0 || slot >= static_cast<int>(tokens.size())) {
        std::ostringstream ss;
        ss << "cannot mask slot " << slot << " of a " << tokens.size() << "-token prompt";
        throw std::invalid_argument(ss.str());
    }
    out.tokens[slot] = PromptToken{};
    return out;
}

void Prompt::validate(int vocab_size, int max_tokens) const {
    if (static_cast<int>(tokens.size()) > max_tokens) {
        std::ostringstream ss;
        ss << "prompt has " << tokens.size() << " tokens, capacity is " << max_tokens;
        throw std::invalid_argument(ss.str());
    }
    std::vector<int> factors;
    for (const PromptToken& t : tokens) {
        if (t.index < 0 || t.index >= vocab_size) {
            std::ostringstream ss;
            ss << "token index " << t.index << " outside vocabulary of " << vocab_size;
            throw std::invalid_argument(ss.str());
        }
        if (t.factor >= 0) {
            if (std::find(factors.begin(), factors.end(), t.factor) != factors.end()) {
                std::ostringstream ss;
                ss << "two prompt tokens claim factor " << t.factor;
                throw std::invalid_argument(ss.str());
            }
            factors.push_back(t.factor);
        }
    }
}

// ---- network ----------------------------------------------------------------

void NetDims::validate() const {
    if (grid_h < 1 || grid_w < 1 || max_tokens < 1 || vocab_size < 1 || d_token < 1 ||
        d_model < 2 || d_mlp < 1)
        throw std::invalid_argument("network dimensions must be positive");
    if (d_model % 2 != 0)
        throw std::invalid_argument("d_model must be even for the sinusoidal time features");
}

std::vector<std::pair<std::string, Tensor>> VelocityNet::named_params() {
    return {
        {"token_table", token_table}, {"cell_w", cell_w},  {"cell_b", cell_b},
        {"time_w", time_w},           {"time_b", time_b},  {"ln1_g", ln1_g},
        {"ln1_b", ln1_b},             {"q_w", q_w},        {"q_b", q_b},
        {"k_w", k_w},                 {"v_w", v_w},
        {"v_b", v_b},                 {"out_w", out_w},    {"out_b", out_b},
        {"ln2_g", ln2_g},             {"ln2_b", ln2_b},    {"mlp1_w", mlp1_w},
        {"mlp1_b", mlp1_b},           {"mlp2_w", mlp2_w},  {"mlp2_b", mlp2_b},
        {"head_w", head_w},           {"head_b", head_b},
    };
}

std::vector<Tensor> VelocityNet::params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

VelocityNet VelocityNet::frozen() const {
    VelocityNet f = *this;
    auto freeze = [](Tensor& t) { t = t.detached(); };
    freeze(f.token_table);
    freeze(f.cell_w), freeze(f.cell_b);
    freeze(f.time_w), freeze(f.time_b);
    freeze(f.ln1_g), freeze(f.ln1_b);
    freeze(f.q_w), freeze(f.q_b);
    freeze(f.k_w);
    freeze(f.v_w), freeze(f.v_b);
    freeze(f.out_w), freeze(f.out_b);
    freeze(f.ln2_g), freeze(f.ln2_b);
    freeze(f.mlp1_w), freeze(f.mlp1_b);
    freeze(f.mlp2_w), freeze(f.mlp2_b);
    freeze(f.head_w), freeze(f.head_b);
    f.eval_count = 0;
    return f;
}

VelocityNet init_net(const NetDims& dims, std::uint64_t seed) {
    dims.validate();
    Rng rng(seed);
    VelocityNet net;
    net.dims = dims;

    net.token_table = Tensor::xavier(dims.vocab_size, dims.d_token, rng);
    for (int j = 0; j < dims.d_token; ++j) net.token_table.data()[j] = 0.0f;  // null row
    net.token_table.set_requires_grad(true);

    auto mat = [&](int in, int out) {
        Tensor t = Tensor::xavier(in, out, rng);
        t.set_requires_grad(true);
        return t;
    };
    auto vec = [&](int n, float fill) {
        Tensor t = Tensor::full({n}, fill);
        t.set_requires_grad(true);
        return t;
    };

    net.cell_w = mat(1 + kPosFeatures, dims.d_model);
    net.cell_b = vec(dims.d_model, 0.0f);
    net.time_w = mat(dims.d_model, dims.d_model);
    net.time_b = vec(dims.d_model, 0.0f);
    net.ln1_g = vec(dims.d_model, 1.0f);
    net.ln1_b = vec(dims.d_model, 0.0f);
    net.q_w = mat(dims.d_model, dims.d_model);
    net.q_b = vec(dims.d_model, 0.0f);
    net.k_w = mat(dims.d_token, dims.d_model);
    net.v_w = mat(dims.d_token, dims.d_model);
    net.v_b = vec(dims.d_model, 0.0f);
    net.out_w = mat(dims.d_model, dims.d_model);
    net.out_b = vec(dims.d_model, 0.0f);
    net.ln2_g = vec(dims.d_model, 1.0f);
    net.ln2_b = vec(dims.d_model, 0.0f);
    net.mlp1_w = mat(dims.d_model, dims.d_mlp);
    net.mlp1_b = vec(dims.d_mlp, 0.0f);
    net.mlp2_w = mat(dims.d_mlp, dims.d_model);
    net.mlp2_b = vec(dims.d_model, 0.0f);

    // Small head: the untrained field starts near zero, which keeps early
    // training stable while leaving gradients alive everywhere.
    net.head_w = mat(dims.d_model, 1);
    for (int i = 0; i < net.head_w.numel(); ++i) net.head_w.data()[i] *= 0.05f;
    net.head_b = vec(1, 0.0f);

    net.pos_enc = build_pos_enc(dims.grid_h, dims.grid_w);
    return net;
}

namespace {

void check_state(const NetDims& d, const Tensor& x_t, double t) {
    if (x_t.shape() != Shape{d.grid_h, d.grid_w})
        throw std::invalid_argument("predict_velocity: state shape " + shape_str(x_t.shape()) +
                                    " does not match grid [" + std::to_string(d.grid_h) + "," +
                                    std::to_string(d.grid_w) + "]");
    if (!(t >= 0.0 && t <= 1.0)) {
        std::ostringstream ss;
        ss << "predict_velocity: time " << t << " outside [0, 1]";
        throw std::invalid_argument(ss.str());
    }
}

// The grid trunk shared by every evaluation entry point: cell features plus
// the time embedding, one cross-attention read of `tokens_kv`, the MLP, and
// the scalar head.  The attention row count is tokens_kv's row count.
Tensor forward_grid(const VelocityNet& net, const Tensor& x_t, double t, const Tensor& tokens_kv,
                    AttnTrace* trace) {
    const NetDims& d = net.dims;
    ++net.eval_count;

    // Cell features: value + position encoding, plus the time embedding on
    // every cell row.
    Tensor cells = concat_cols(reshape(x_t, {d.cells(), 1}), net.pos_enc);
    Tensor h0 = linear(cells, net.cell_w, net.cell_b);
    Tensor time_feat = reshape(sinusoidal_embedding(t, d.d_model), {1, d.d_model});
    Tensor time_row = linear(time_feat, net.time_w, net.time_b);
    h0 = add_rowvec(h0, reshape(time_row, {d.d_model}));

    // Single-head cross-attention, pre-norm, residual.
    Tensor q = linear(layer_norm_rows(h0, net.ln1_g, net.ln1_b), net.q_w, net.q_b);
    Tensor k = matmul(tokens_kv, net.k_w);
    Tensor v = linear(tokens_kv, net.v_w, net.v_b);
    Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(d.d_model))));
    Tensor h1 = add(h0, linear(matmul(attn, v), net.out_w, net.out_b));
    if (trace) {
        trace->keys = k;
        trace->values = v;
        trace->weights = attn;
    }

    // MLP trunk, pre-norm, residual; linear head to one velocity per cell.
    Tensor mid = gelu(linear(layer_norm_rows(h1, net.ln2_g, net.ln2_b), net.mlp1_w, net.mlp1_b));
    Tensor h2 = add(h1, linear(mid, net.mlp2_w, net.mlp2_b));
    return reshape(linear(h2, net.head_w, net.head_b), {d.grid_h, d.grid_w});
}

}  // namespace

Tensor token_embedding(const VelocityNet& net, int token_index) {
    const int d_token = net.dims.d_token;
    if (token_index < 0 || token_index >= net.dims.vocab_size) {
        std::ostringstream ss;
        ss << "token index " << token_index << " outside vocabulary of " << net.dims.vocab_size;
        throw std::invalid_argument(ss.str());
    }
    std::vector<float> row(static_cast<std::size_t>(d_token));
    const float* src = net.token_table.data() + std::size_t(token_index) * d_token;
    for (int i = 0; i < d_token; ++i) row[i] = src[i];
    return Tensor::from({d_token}, std::move(row));
}

Tensor predict_velocity(const VelocityNet& net, const Tensor& x_t, double t, const Prompt& prompt,
                        const std::vector<TokenDelta>& offsets, AttnTrace* trace) {
    const NetDims& d = net.dims;
    check_state(d, x_t, t);
    prompt.validate(d.vocab_size, d.max_tokens);
    for (const TokenDelta& o : offsets) {
        if (o.slot < 0 || o.slot >= d.max_tokens) {
            std::ostringstream ss;
            ss << "offset slot " << o.slot << " outside prompt capacity " << d.max_tokens;
            throw std::invalid_argument(ss.str());
        }
        if (o.delta.shape() != Shape{d.d_token})
            throw std::invalid_argument("offset delta shape " + shape_str(o.delta.shape()) +
                                        " does not match token width " +
                                        std::to_string(d.d_token));
    }
    // Token embeddings: the query path never sees them; deltas are injected
    // ahead of the key/value projections only.
    std::vector<int> indices(static_cast<std::size_t>(d.max_tokens), 0);
    for (int s = 0; s < d.max_tokens; ++s) indices[s] = prompt.at_slot(s).index;
    Tensor tokens_kv = gather_rows(net.token_table, indices);
    for (const TokenDelta& o : offsets)
        tokens_kv = add(tokens_kv, pad_row(o.delta, d.max_tokens, o.slot));

    return forward_grid(net, x_t, t, tokens_kv, trace);
}

Tensor predict_velocity_tokens(const VelocityNet& net, const Tensor& x_t, double t,
                               const std::vector<int>& kv_tokens) {
    const NetDims& d = net.dims;
    check_state(d, x_t, t);
    if (kv_tokens.empty())
        throw std::invalid_argument("predict_velocity_tokens: key/value token list is empty");
    if (static_cast<int>(kv_tokens.size()) > d.max_tokens) {
        std::ostringstream ss;
        ss << "predict_velocity_tokens: " << kv_tokens.size() << " tokens exceed capacity "
           << d.max_tokens;
        throw std::invalid_argument(ss.str());
    }
    for (int idx : kv_tokens) {
        if (idx < 0 || idx >= d.vocab_size) {
            std::ostringstream ss;
            ss << "token index " << idx << " outside vocabulary of " << d.vocab_size;
            throw std::invalid_argument(ss.str());
        }
    }
    return forward_grid(net, x_t, t, gather_rows(net.token_table, kv_tokens), nullptr);
}

// ---- training ---------------------------------------------------------------

Tensor flow_loss(const VelocityNet& net, const Tensor& x0, const Prompt& prompt,
                 const std::vector<TokenDelta>& offsets, const TimestepSampler& sampler,
                 Rng& rng) {
    Tensor x1 = randn(x0.shape(), rng);
    const double t = sample_timestep(sampler, rng);
    Tensor pred = predict_velocity(net, interpolate(x0, x1, t), t, prompt, offsets);
    return mse(pred, target_velocity(x0, x1));
}

std::vector<double> train_base(VelocityNet& net, const std::vector<TrainExample>& data,
                               const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train_base: dataset is empty");
    if (cfg.epochs < 0) throw std::invalid_argument("train_base: negative epoch count");
    if (cfg.batch_size < 1) throw std::invalid_argument("train_base: batch size must be >= 1");

    std::vector<double> curve;
    if (cfg.epochs == 0) return curve;

    if (!(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0))
        throw std::invalid_argument("train_base: final_lr_fraction must lie in (0, 1]");

    Adam opt(net.params(), AdamConfig{cfg.lr});
    const TimestepSampler sampler = TimestepSampler::uniform();
    const int n = static_cast<int>(data.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(batches_per_epoch) * cfg.epochs;
    long step_index = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(child_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        for (int i = 0; i < n; ++i) order[i] = i;
        for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, n - start);
            Graph graph;
            Tensor total;
            for (int b = 0; b < count; ++b) {
                const TrainExample& ex = data[order[start + b]];
                Tensor one = flow_loss(net, ex.image, ex.prompt, {}, sampler, rng);
                total = (b == 0) ? one : add(total, one);
            }
            Tensor loss = scale(total, 1.0 / count);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                std::ostringstream ss;
                ss << "training diverged at epoch " << epoch << " (non-finite loss)";
                throw NumericError(ss.str());
            }
            graph.backward(loss);
            // The null token stays pinned at zero: drop its gradient rows.
            for (int j = 0; j < net.dims.d_token; ++j) net.token_table.grad()[j] = 0.0f;
            const double progress = total_steps > 1 ? double(step_index) / (total_steps - 1) : 0.0;
            const double floor_f = cfg.final_lr_fraction;
            opt.set_lr(cfg.lr * (floor_f + (1.0 - floor_f) * 0.5 * (1.0 + std::cos(M_PI * progress))));
            ++step_index;
            try {
                opt.step();
            } catch (const NumericError& e) {
                std::ostringstream ss;
                ss << "training diverged at epoch " << epoch << ": " << e.what();
                throw NumericError(ss.str());
            }
            epoch_loss += value;
            ++batches;
        }
        curve.push_back(epoch_loss / batches);
    }
    return curve;
}

}  // namespace fw
