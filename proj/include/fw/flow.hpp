#pragma once
// Flow-matching primitives: the linear noise-to-data path, its target
// velocity, timestep samplers for training, and the reverse-time ODE sampler.
// Time convention throughout: t = 0 is data, t = 1 is pure noise; generation
// integrates from t = 1 down to t = 0, so the "earliest" generation steps are
// the highest-t ones.

#include <cstdint>
#include <functional>

#include "fw/rng.hpp"
#include "fw/tensor.hpp"

namespace fw {

// x_t = (1 - t)·x0 + t·x1.  t must lie in [0, 1].
Tensor interpolate(const Tensor& x0, const Tensor& x1, double t);

// The velocity realizing that path: x1 - x0, constant in t.
Tensor target_velocity(const Tensor& x0, const Tensor& x1);

// ---- stages -----------------------------------------------------------------

// The three phases of the reverse-time trajectory.  Blueprint covers the
// earliest (highest-t) steps where global layout forms, Instantiation the
// middle band where content appears, Refinement the final approach to data.
enum class Stage { Blueprint, Instantiation, Refinement };
const char* stage_name(Stage s);

// Partition of the 1-based step grid [1..num_steps]: steps 1..blueprint_end
// are Blueprint, blueprint_end+1..instantiation_end are Instantiation, the
// remainder Refinement.  Step j runs at t_j = (num_steps - j + 1)/num_steps,
// so each stage owns the half-open t-band (band_low, band_high].
struct StageSchedule {
    int num_steps = 30;
    int blueprint_end = 10;
    int instantiation_end = 20;

    void validate() const;  // throws std::invalid_argument
    Stage of_step(int step) const;
    Stage of_time(double t) const;
    double band_low(Stage s) const;
    double band_high(Stage s) const;
};

// ---- timestep sampling ------------------------------------------------------

// Training-time distribution over t.  Uniform draws from [0, 1); the
// stage-weighted variant concentrates draws in one stage's t-band and falls
// back to uniform with the leftover probability, so no part of the
// trajectory is ever starved.
struct TimestepSampler {
    enum class Kind { Uniform, StageWeighted };
    Kind kind = Kind::Uniform;
    Stage stage = Stage::Instantiation;  // StageWeighted only
    double in_stage_prob = 0.8;          // StageWeighted only, must be in [0, 1]
    StageSchedule schedule{};

    static TimestepSampler uniform();
    static TimestepSampler stage_weighted(Stage stage, double in_stage_prob = 0.8,
                                          StageSchedule schedule = {});
};

double sample_timestep(const TimestepSampler& sampler, Rng& rng);

// ---- ODE sampling -----------------------------------------------------------

enum class Integrator { Euler, Heun };

struct SamplerConfig {
    int num_steps = 30;
    Integrator method = Integrator::Euler;
    std::uint64_t seed = 0;
};

// A velocity field: maps (state, time) to a tensor of the state's shape.
using VelocityFieldFn = std::function<Tensor(const Tensor&, double)>;

// Called once per step with the 1-based step index, the grid time, the state
// entering the step, and the field evaluated at that state.  Observers must
// not mutate anything; attaching one never changes the trajectory.
using StepObserver = std::function<void(int step, double t, const Tensor& x, const Tensor& v)>;

// Draws x(1) ~ N(0, I) (or starts from `initial_noise` when given), then
// integrates dx/dt = field(x, t) from t = 1 down to t = 0 on the uniform
// grid.  Euler: x <- x - h·v.  Heun: trapezoidal corrector, except the final
// step which stays plain Euler so the field is never evaluated at t = 0.
// Throws NumericError (with the step index) on non-finite velocities.
Tensor ode_sample(const VelocityFieldFn& field, const Shape& shape, const SamplerConfig& config,
                  const StepObserver& observer = nullptr, const Tensor* initial_noise = nullptr);

// Monte-Carlo flow-matching objective for a plain (non-trainable) field:
// mean over `n` draws of row x0 ~ rows(data), x1 ~ N(0, I), t ~ sampler of
// the per-element squared error ‖field(x_t, t) - (x1 - x0)‖²/dim.  The
// minimizer over all fields is the conditional mean E[x1 - x0 | x_t], so a
// field achieving the conditional-variance floor is exactly optimal.
double field_flow_loss(const VelocityFieldFn& field, const Tensor& data_rows,
                       const TimestepSampler& sampler, int n, std::uint64_t seed);

}  // namespace fw
