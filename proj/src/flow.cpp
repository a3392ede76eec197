#include "fw/flow.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fw/errors.hpp"

namespace fw {

namespace {

void check_time_range(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        std::ostringstream ss;
        ss << "time must lie in [0, 1], got " << t;
        throw std::invalid_argument(ss.str());
    }
}

}  // namespace

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
    check_time_range(t);
    if (x0.shape() != x1.shape())
        throw std::invalid_argument("interpolate: shape mismatch " + shape_str(x0.shape()) +
                                    " vs " + shape_str(x1.shape()));
    const int n = x0.numel();
    Tensor out = Tensor::zeros(x0.shape());
    for (int i = 0; i < n; ++i)
        out.data()[i] = static_cast<float>((1.0 - t) * x0.data()[i] + t * x1.data()[i]);
    return out;
}

Tensor target_velocity(const Tensor& x0, const Tensor& x1) {
    if (x0.shape() != x1.shape())
        throw std::invalid_argument("target_velocity: shape mismatch " + shape_str(x0.shape()) +
                                    " vs " + shape_str(x1.shape()));
    return sub(x1, x0);
}

// ---- stages -----------------------------------------------------------------

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::Blueprint: return "blueprint";
        case Stage::Instantiation: return "instantiation";
        case Stage::Refinement: return "refinement";
    }
    return "?";
}

void StageSchedule::validate() const {
    if (num_steps < 3 || blueprint_end <= 0 || instantiation_end <= blueprint_end ||
        instantiation_end >= num_steps) {
        std::ostringstream ss;
        ss << "stage boundaries must satisfy 0 < " << blueprint_end << " < " << instantiation_end
           << " < " << num_steps;
        throw std::invalid_argument(ss.str());
    }
}

Stage StageSchedule::of_step(int step) const {
    validate();
    if (step < 1 || step > num_steps) {
        std::ostringstream ss;
        ss << "step " << step << " outside [1, " << num_steps << "]";
        throw std::invalid_argument(ss.str());
    }
    if (step <= blueprint_end) return Stage::Blueprint;
    if (step <= instantiation_end) return Stage::Instantiation;
    return Stage::Refinement;
}

Stage StageSchedule::of_time(double t) const {
    validate();
    check_time_range(t);
    if (t > band_low(Stage::Blueprint)) return Stage::Blueprint;
    if (t > band_low(Stage::Instantiation)) return Stage::Instantiation;
    return Stage::Refinement;
}

double StageSchedule::band_low(Stage s) const {
    switch (s) {
        case Stage::Blueprint:
            return static_cast<double>(num_steps - blueprint_end) / num_steps;
        case Stage::Instantiation:
            return static_cast<double>(num_steps - instantiation_end) / num_steps;
        case Stage::Refinement: return 0.0;
    }
    return 0.0;
}

double StageSchedule::band_high(Stage s) const {
    switch (s) {
        case Stage::Blueprint: return 1.0;
        case Stage::Instantiation: return band_low(Stage::Blueprint);
        case Stage::Refinement: return band_low(Stage::Instantiation);
    }
    return 0.0;
}

// ---- timestep sampling ------------------------------------------------------

TimestepSampler TimestepSampler::uniform() { return TimestepSampler{}; }

TimestepSampler TimestepSampler::stage_weighted(Stage stage, double in_stage_prob,
                                                StageSchedule schedule) {
    TimestepSampler s;
    s.kind = Kind::StageWeighted;
    s.stage = stage;
    s.in_stage_prob = in_stage_prob;
    s.schedule = schedule;
    return s;
}

double sample_timestep(const TimestepSampler& sampler, Rng& rng) {
    if (sampler.kind == TimestepSampler::Kind::Uniform) return rng.uniform();
    if (!(sampler.in_stage_prob >= 0.0 && sampler.in_stage_prob <= 1.0)) {
        std::ostringstream ss;
        ss << "in-stage probability must lie in [0, 1], got " << sampler.in_stage_prob;
        throw std::invalid_argument(ss.str());
    }
    sampler.schedule.validate();
    if (rng.uniform() < sampler.in_stage_prob) {
        const double lo = sampler.schedule.band_low(sampler.stage);
        const double hi = sampler.schedule.band_high(sampler.stage);
        return rng.uniform(lo, hi);
    }
    return rng.uniform();
}

// ---- ODE sampling -----------------------------------------------------------

namespace {

void check_velocity(const Tensor& v, const Tensor& x, int step, double t) {
    if (v.shape() != x.shape())
        throw std::invalid_argument("ode_sample: field returned shape " + shape_str(v.shape()) +
                                    " for state of shape " + shape_str(x.shape()));
    if (!all_finite(v)) {
        std::ostringstream ss;
        ss << "ode_sample: non-finite velocity at step " << step << " (t=" << t << ")";
        throw NumericError(ss.str());
    }
}

}  // namespace

Tensor ode_sample(const VelocityFieldFn& field, const Shape& shape, const SamplerConfig& config,
                  const StepObserver& observer, const Tensor* initial_noise) {
    if (config.num_steps < 1)
        throw std::invalid_argument("ode_sample: need at least one step");
    Rng rng(config.seed);
    Tensor x = initial_noise ? initial_noise->detached() : randn(shape, rng);
    if (x.shape() != shape)
        throw std::invalid_argument("ode_sample: initial noise shape " + shape_str(x.shape()) +
                                    " does not match requested " + shape_str(shape));
    const int steps = config.num_steps;
    const double h = 1.0 / steps;
    for (int j = 1; j <= steps; ++j) {
        const double t = static_cast<double>(steps - (j - 1)) / steps;
        Tensor v = field(x, t);
        check_velocity(v, x, j, t);
        if (observer) observer(j, t, x, v);
        if (config.method == Integrator::Heun && j < steps) {
            // Trapezoidal corrector using the field at the next grid point.
            const double t_next = static_cast<double>(steps - j) / steps;
            Tensor x_pred = sub(x, scale(v, h));
            Tensor v_next = field(x_pred, t_next);
            check_velocity(v_next, x, j, t_next);
            x = sub(x, scale(add(v, v_next), h / 2.0));
        } else {
            x = sub(x, scale(v, h));
        }
    }
    return x;
}

double field_flow_loss(const VelocityFieldFn& field, const Tensor& data_rows,
                       const TimestepSampler& sampler, int n, std::uint64_t seed) {
    if (data_rows.shape().size() != 2)
        throw std::invalid_argument("field_flow_loss: data must be rows, got shape " +
                                    shape_str(data_rows.shape()));
    if (n < 1) throw std::invalid_argument("field_flow_loss: need at least one draw");
    const int rows = data_rows.shape()[0];
    const int d = data_rows.shape()[1];
    Rng rng(seed);
    double total = 0.0;
    Tensor x0 = Tensor::zeros({d});
    Tensor x1 = Tensor::zeros({d});
    for (int i = 0; i < n; ++i) {
        const int r = rng.uniform_int(rows);
        for (int j = 0; j < d; ++j) {
            x0.data()[j] = data_rows.data()[r * d + j];
            x1.data()[j] = static_cast<float>(rng.normal());
        }
        const double t = sample_timestep(sampler, rng);
        Tensor v = field(interpolate(x0, x1, t), t);
        double err = 0.0;
        for (int j = 0; j < d; ++j) {
            const double diff = static_cast<double>(v.data()[j]) -
                                (static_cast<double>(x1.data()[j]) - x0.data()[j]);
            err += diff * diff;
        }
        total += err / d;
    }
    return total / n;
}

}  // namespace fw
