#pragma once
// Closed-form reference velocity for Gaussian-mixture data transported along
// the linear path x_t = (1-t)·x0 + t·x1 with x1 ~ N(0, I).  Everything here
// is exact up to rounding, which makes this module the measuring stick for
// samplers, guidance algebra, and trained velocity predictors.

#include <cstdint>
#include <vector>

#include "fw/rng.hpp"
#include "fw/tensor.hpp"

namespace fw {

// Diagonal-covariance mixture. Full covariances are deliberately out of
// scope: diagonal conditioning covers every verification need in a few
// lines of per-axis algebra.
struct GaussianMixture {
    std::vector<double> weights;                 // K entries, positive, summing to 1
    std::vector<std::vector<double>> means;      // K rows of length dim
    std::vector<std::vector<double>> variances;  // K rows of per-axis variances, > 0

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

    // Throws std::invalid_argument naming the offending field.
    void validate() const;

    // {n, dim} draws from the mixture.
    Tensor sample(int n, Rng& rng) const;
};

// Posterior component responsibilities r_k(x, t) under the path marginal
// x_t | k ~ N((1-t)·μ_k, (1-t)²·σ²_k + t²).  Sums to 1.
std::vector<double> responsibilities(const GaussianMixture& gmm, const float* x, double t);

// E[x1 - x0 | x_t = x], the velocity field whose flow transports noise onto
// the mixture.  `x` is a single point {d} or a batch of rows {n, d}.
// t must lie in (0, 1]: at t = 0 the path has collapsed onto the data and
// the conditional is no longer a function of x alone.
Tensor oracle_velocity(const GaussianMixture& gmm, const Tensor& x, double t);

// Per-axis Var(x1 - x0 | x_t = x): the irreducible mean-squared error of any
// velocity predictor evaluated at (x, t).  Shape rules as oracle_velocity.
Tensor oracle_velocity_variance(const GaussianMixture& gmm, const Tensor& x, double t);

struct McVelocityEstimate {
    Tensor velocity;                 // {d} kernel-weighted mean of x1 - x0
    Tensor standard_error;           // {d} delete-one jackknife standard errors
    double effective_samples = 0.0;  // (Σw)² / Σw², weight-concentration diagnostic
    bool reliable = false;           // effective_samples >= 30
};

// Brute-force estimate of E[x1 - x0 | x_t ≈ x]: simulates `n_samples`
// (x0, x1) pairs, weights each by exp(-‖x_t - x‖² / (2·bandwidth²)), and
// returns the self-normalized weighted mean with jackknife standard errors.
// Requires n_samples >= 1000 and bandwidth > 0; `x` must be a single point.
McVelocityEstimate mc_velocity(const GaussianMixture& gmm, const Tensor& x, double t,
                               int n_samples, double bandwidth, std::uint64_t seed);

}  // namespace fw
