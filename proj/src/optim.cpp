#include "fw/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "fw/errors.hpp"

namespace fw {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        if (!p.requires_grad()) throw std::invalid_argument("Adam: parameter does not track gradients");
        m_.emplace_back(std::size_t(p.numel()), 0.0f);
        v_.emplace_back(std::size_t(p.numel()), 0.0f);
    }
}

void Adam::set_lr(double lr) {
    if (lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
    cfg_.lr = lr;
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.grad()) throw std::invalid_argument("Adam::step: parameter has no gradient buffer");
        float* x = p.data();
        const float* g = p.grad();
        float* m = m_[pi].data();
        float* v = v_[pi].data();
        const int n = p.numel();
        for (int i = 0; i < n; ++i) {
            const double gi = g[i];
            if (!std::isfinite(gi)) throw NumericError("Adam::step: non-finite gradient");
            const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            m[i] = float(mi);
            v[i] = float(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            x[i] = float(x[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
        p.zero_grad();
    }
}

}  // namespace fw
