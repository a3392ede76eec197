#include "fw/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fw {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void check_time(double t) {
    if (!(t > 0.0 && t <= 1.0)) {
        std::ostringstream ss;
        ss << "oracle velocity is defined for t in (0, 1], got t=" << t;
        throw std::invalid_argument(ss.str());
    }
}

void check_point_dim(const GaussianMixture& gmm, const Tensor& x) {
    const Shape& s = x.shape();
    const int d = s.empty() ? 0 : s.back();
    if ((s.size() != 1 && s.size() != 2) || d != gmm.dim()) {
        std::ostringstream ss;
        ss << "expected points of dimension " << gmm.dim() << ", got shape " << shape_str(s);
        throw std::invalid_argument(ss.str());
    }
}

// Applies `fn(point_in, point_out)` to each row of a {d} or {n, d} tensor.
template <typename Fn>
Tensor map_rows(const GaussianMixture& gmm, const Tensor& x, Fn fn) {
    check_point_dim(gmm, x);
    const int d = gmm.dim();
    const int n = x.shape().size() == 2 ? x.shape()[0] : 1;
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < n; ++i) fn(x.data() + i * d, out.data() + i * d);
    return out;
}

}  // namespace

void GaussianMixture::validate() const {
    const int k = components();
    if (k == 0) throw std::invalid_argument("mixture needs at least one component");
    if (static_cast<int>(means.size()) != k || static_cast<int>(variances.size()) != k)
        throw std::invalid_argument("mixture weights, means, and variances must have equal length");
    const int d = dim();
    if (d == 0) throw std::invalid_argument("mixture components must have dimension >= 1");
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        if (!(weights[i] > 0.0)) {
            std::ostringstream ss;
            ss << "mixture weight " << i << " must be positive, got " << weights[i];
            throw std::invalid_argument(ss.str());
        }
        total += weights[i];
        if (static_cast<int>(means[i].size()) != d || static_cast<int>(variances[i].size()) != d) {
            std::ostringstream ss;
            ss << "mixture component " << i << " has inconsistent dimension";
            throw std::invalid_argument(ss.str());
        }
        for (double v : variances[i]) {
            if (!(v > 0.0)) {
                std::ostringstream ss;
                ss << "mixture component " << i << " has non-positive variance " << v;
                throw std::invalid_argument(ss.str());
            }
        }
    }
    if (std::abs(total - 1.0) > 1e-9) {
        std::ostringstream ss;
        ss << "mixture weights must sum to 1, got " << total;
        throw std::invalid_argument(ss.str());
    }
}

Tensor GaussianMixture::sample(int n, Rng& rng) const {
    validate();
    if (n <= 0) throw std::invalid_argument("sample count must be positive");
    const int d = dim();
    Tensor out = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        int k = 0;
        double cum = weights[0];
        while (u > cum && k + 1 < components()) cum += weights[++k];
        for (int j = 0; j < d; ++j)
            out.data()[i * d + j] = static_cast<float>(means[k][j] + std::sqrt(variances[k][j]) * rng.normal());
    }
    return out;
}

std::vector<double> responsibilities(const GaussianMixture& gmm, const float* x, double t) {
    check_time(t);
    const int k = gmm.components();
    const int d = gmm.dim();
    const double a = 1.0 - t;
    std::vector<double> logp(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        double lp = std::log(gmm.weights[c]);
        for (int j = 0; j < d; ++j) {
            const double s2 = a * a * gmm.variances[c][j] + t * t;
            const double diff = static_cast<double>(x[j]) - a * gmm.means[c][j];
            lp -= 0.5 * (kLog2Pi + std::log(s2) + diff * diff / s2);
        }
        logp[c] = lp;
    }
    const double m = *std::max_element(logp.begin(), logp.end());
    double total = 0.0;
    for (double& lp : logp) {
        lp = std::exp(lp - m);
        total += lp;
    }
    for (double& lp : logp) lp /= total;
    return logp;
}

Tensor oracle_velocity(const GaussianMixture& gmm, const Tensor& x, double t) {
    gmm.validate();
    check_time(t);
    const double a = 1.0 - t;
    return map_rows(gmm, x, [&](const float* in, float* out) {
        const std::vector<double> r = responsibilities(gmm, in, t);
        for (int j = 0; j < gmm.dim(); ++j) {
            double v = 0.0;
            for (int c = 0; c < gmm.components(); ++c) {
                const double s2 = a * a * gmm.variances[c][j] + t * t;
                const double diff = static_cast<double>(in[j]) - a * gmm.means[c][j];
                // E[x1 - x0 | x_t, component c] from linear-Gaussian conditioning.
                v += r[c] * ((t - a * gmm.variances[c][j]) * diff / s2 - gmm.means[c][j]);
            }
            out[j] = static_cast<float>(v);
        }
    });
}

Tensor oracle_velocity_variance(const GaussianMixture& gmm, const Tensor& x, double t) {
    gmm.validate();
    check_time(t);
    const double a = 1.0 - t;
    return map_rows(gmm, x, [&](const float* in, float* out) {
        const std::vector<double> r = responsibilities(gmm, in, t);
        for (int j = 0; j < gmm.dim(); ++j) {
            double mean = 0.0, second = 0.0;
            for (int c = 0; c < gmm.components(); ++c) {
                const double var = gmm.variances[c][j];
                const double s2 = a * a * var + t * t;
                const double diff = static_cast<double>(in[j]) - a * gmm.means[c][j];
                const double vc = (t - a * var) * diff / s2 - gmm.means[c][j];
                // Posterior variance of x1 - x0 within one component.
                const double within = (1.0 + var) - (t - a * var) * (t - a * var) / s2;
                mean += r[c] * vc;
                second += r[c] * (within + vc * vc);
            }
            out[j] = static_cast<float>(second - mean * mean);
        }
    });
}

McVelocityEstimate mc_velocity(const GaussianMixture& gmm, const Tensor& x, double t,
                               int n_samples, double bandwidth, std::uint64_t seed) {
    gmm.validate();
    check_time(t);
    check_point_dim(gmm, x);
    if (x.shape().size() != 1)
        throw std::invalid_argument("mc_velocity estimates one point at a time");
    if (n_samples < 1000) {
        std::ostringstream ss;
        ss << "mc_velocity needs at least 1000 samples, got " << n_samples;
        throw std::invalid_argument(ss.str());
    }
    if (!(bandwidth > 0.0)) {
        std::ostringstream ss;
        ss << "kernel bandwidth must be positive, got " << bandwidth;
        throw std::invalid_argument(ss.str());
    }

    const int d = gmm.dim();
    const double a = 1.0 - t;
    Rng rng(seed);

    std::vector<double> logw(static_cast<std::size_t>(n_samples));
    std::vector<double> y(static_cast<std::size_t>(n_samples) * d);  // x1 - x0 per sample
    for (int i = 0; i < n_samples; ++i) {
        const double u = rng.uniform();
        int k = 0;
        double cum = gmm.weights[0];
        while (u > cum && k + 1 < gmm.components()) cum += gmm.weights[++k];
        double dist2 = 0.0;
        for (int j = 0; j < d; ++j) {
            const double x0 = gmm.means[k][j] + std::sqrt(gmm.variances[k][j]) * rng.normal();
            const double x1 = rng.normal();
            const double xt = a * x0 + t * x1;
            const double diff = xt - static_cast<double>(x.data()[j]);
            dist2 += diff * diff;
            y[static_cast<std::size_t>(i) * d + j] = x1 - x0;
        }
        logw[i] = -dist2 / (2.0 * bandwidth * bandwidth);
    }

    const double lmax = *std::max_element(logw.begin(), logw.end());
    std::vector<double> w(static_cast<std::size_t>(n_samples));
    double wsum = 0.0, w2sum = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        w[i] = std::exp(logw[i] - lmax);
        wsum += w[i];
        w2sum += w[i] * w[i];
    }

    McVelocityEstimate est;
    est.effective_samples = wsum * wsum / w2sum;
    est.reliable = est.effective_samples >= 30.0;
    est.velocity = Tensor::zeros({d});
    est.standard_error = Tensor::zeros({d});

    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < n_samples; ++i) s += w[i] * y[static_cast<std::size_t>(i) * d + j];
        est.velocity.data()[j] = static_cast<float>(s / wsum);

        // Delete-one jackknife over the self-normalized ratio, O(n) per axis.
        double loo_sum = 0.0, loo_sq = 0.0;
        for (int i = 0; i < n_samples; ++i) {
            const double denom = wsum - w[i];
            const double loo = denom > 0.0 ? (s - w[i] * y[static_cast<std::size_t>(i) * d + j]) / denom
                                           : s / wsum;
            loo_sum += loo;
            loo_sq += loo * loo;
        }
        const double n = static_cast<double>(n_samples);
        const double var = (n - 1.0) / n * (loo_sq - loo_sum * loo_sum / n);
        est.standard_error.data()[j] = static_cast<float>(std::sqrt(std::max(var, 0.0)));
    }
    return est;
}

}  // namespace fw
