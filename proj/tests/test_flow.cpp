#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "fw/errors.hpp"
#include "fw/flow.hpp"
#include "fw/oracle.hpp"
#include "fw/rng.hpp"

using fw::GaussianMixture;
using fw::Integrator;
using fw::SamplerConfig;
using fw::Stage;
using fw::StageSchedule;
using fw::Tensor;
using fw::TimestepSampler;

namespace {

GaussianMixture two_mode_2d() {
    GaussianMixture g;
    g.weights = {0.4, 0.6};
    g.means = {{-1.5, 0.0}, {1.2, 0.8}};
    g.variances = {{0.35, 0.5}, {0.6, 0.25}};
    return g;
}

fw::VelocityFieldFn oracle_field(const GaussianMixture& g) {
    return [&g](const Tensor& x, double t) { return fw::oracle_velocity(g, x, t); };
}

}  // namespace

TEST_CASE("path endpoints reproduce data and noise bit-exactly") {
    fw::Rng rng(1);
    Tensor x0 = fw::randn({4, 4}, rng);
    Tensor x1 = fw::randn({4, 4}, rng);
    CHECK(fw::same_values(fw::interpolate(x0, x1, 0.0), x0));
    CHECK(fw::same_values(fw::interpolate(x0, x1, 1.0), x1));
    Tensor mid = fw::interpolate(Tensor::from({1}, {0}), Tensor::from({1}, {2}), 0.5);
    CHECK(mid.at(0) == 1.0f);

    CHECK_THROWS_AS(fw::interpolate(x0, Tensor::zeros({2}), 0.5), std::invalid_argument);
    CHECK_THROWS_AS(fw::interpolate(x0, x1, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(fw::interpolate(x0, x1, 1.1), std::invalid_argument);
}

TEST_CASE("interpolation is affine in t") {
    // Dyadic times on integer-valued tensors: every product is exactly
    // representable, so the midpoint identity holds bitwise.
    Tensor x0 = Tensor::from({3}, {4, -8, 16});
    Tensor x1 = Tensor::from({3}, {12, 0, -4});
    Tensor lo = fw::interpolate(x0, x1, 0.25);
    Tensor hi = fw::interpolate(x0, x1, 0.75);
    Tensor mid = fw::interpolate(x0, x1, 0.5);
    Tensor avg = fw::scale(fw::add(lo, hi), 0.5);
    CHECK(fw::same_values(mid, avg));

    fw::Rng rng(2);
    Tensor a = fw::randn({8}, rng);
    Tensor b = fw::randn({8}, rng);
    const double ta = 0.17, tb = 0.63;
    Tensor m = fw::interpolate(a, b, (ta + tb) / 2);
    Tensor avg2 = fw::scale(fw::add(fw::interpolate(a, b, ta), fw::interpolate(a, b, tb)), 0.5);
    for (int i = 0; i < 8; ++i) CHECK(m.at(i) == doctest::Approx(avg2.at(i)).epsilon(1e-6));
}

TEST_CASE("target velocity is the time derivative of the path") {
    fw::Rng rng(3);
    Tensor x0 = fw::randn({5}, rng);
    Tensor x1 = fw::randn({5}, rng);
    CHECK(fw::max_abs(fw::target_velocity(x0, x0)) == 0.0f);
    CHECK(fw::target_velocity(Tensor::from({1}, {1}), Tensor::from({1}, {4})).at(0) == 3.0f);

    const double t = 0.4, h = 0.01;
    Tensor up = fw::interpolate(x0, x1, t + h);
    Tensor dn = fw::interpolate(x0, x1, t - h);
    Tensor v = fw::target_velocity(x0, x1);
    for (int i = 0; i < 5; ++i) {
        const double fd = (up.at(i) - dn.at(i)) / (2 * h);
        CHECK(std::abs(fd - v.at(i)) < 1e-5);
    }
}

TEST_CASE("stage schedule partitions steps and time bands") {
    StageSchedule s;  // 30 steps, 10/10/10
    CHECK(s.of_step(1) == Stage::Blueprint);
    CHECK(s.of_step(10) == Stage::Blueprint);
    CHECK(s.of_step(11) == Stage::Instantiation);
    CHECK(s.of_step(20) == Stage::Instantiation);
    CHECK(s.of_step(21) == Stage::Refinement);
    CHECK(s.of_step(30) == Stage::Refinement);
    CHECK_THROWS_AS(s.of_step(0), std::invalid_argument);
    CHECK_THROWS_AS(s.of_step(31), std::invalid_argument);

    CHECK(s.of_time(1.0) == Stage::Blueprint);
    CHECK(s.of_time(0.7) == Stage::Blueprint);
    CHECK(s.of_time(2.0 / 3.0) == Stage::Instantiation);
    CHECK(s.of_time(0.5) == Stage::Instantiation);
    CHECK(s.of_time(1.0 / 3.0) == Stage::Refinement);
    CHECK(s.of_time(0.0) == Stage::Refinement);

    // Step times land in their own stage's band.
    for (int j = 1; j <= 30; ++j) {
        const double t = double(30 - (j - 1)) / 30;
        CHECK(s.of_time(t) == s.of_step(j));
    }

    StageSchedule bad{30, 10, 10};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    StageSchedule bad2{30, 0, 20};
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
    StageSchedule bad3{30, 10, 30};
    CHECK_THROWS_AS(bad3.validate(), std::invalid_argument);
}

TEST_CASE("timestep samplers hit their target distributions") {
    fw::Rng rng(4);
    StageSchedule sched;

    auto pinned = TimestepSampler::stage_weighted(Stage::Instantiation, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double t = fw::sample_timestep(pinned, rng);
        CHECK(t > 1.0 / 3.0);
        CHECK(t <= 2.0 / 3.0);
    }

    auto uni = TimestepSampler::uniform();
    double mean = 0;
    for (int i = 0; i < 100000; ++i) mean += fw::sample_timestep(uni, rng);
    CHECK(std::abs(mean / 100000 - 0.5) < 0.01);

    auto weighted = TimestepSampler::stage_weighted(Stage::Blueprint, 0.8);
    int in_band = 0;
    for (int i = 0; i < 100000; ++i)
        if (sched.of_time(fw::sample_timestep(weighted, rng)) == Stage::Blueprint) ++in_band;
    const double expect = 0.8 + 0.2 * (1.0 / 3.0);
    CHECK(std::abs(in_band / 100000.0 - expect) < 0.02);

    auto broken = TimestepSampler::stage_weighted(Stage::Blueprint, 1.2);
    CHECK_THROWS_AS(fw::sample_timestep(broken, rng), std::invalid_argument);
}

TEST_CASE("zero field returns the initial noise; runs are seed-deterministic") {
    auto zero = [](const Tensor& x, double) { return Tensor::zeros(x.shape()); };
    SamplerConfig cfg{30, Integrator::Euler, 77};
    Tensor out = fw::ode_sample(zero, {6}, cfg);
    fw::Rng rng(77);
    Tensor noise = fw::randn({6}, rng);
    CHECK(fw::same_values(out, noise));

    GaussianMixture g = two_mode_2d();
    SamplerConfig cfg2{30, Integrator::Euler, 5};
    Tensor a = fw::ode_sample(oracle_field(g), {2}, cfg2);
    Tensor b = fw::ode_sample(oracle_field(g), {2}, cfg2);
    CHECK(fw::same_values(a, b));
}

TEST_CASE("constant fields integrate exactly") {
    auto const_field = [](float c) {
        return [c](const Tensor& x, double) {
            Tensor v = Tensor::zeros(x.shape());
            for (int i = 0; i < v.numel(); ++i) v.data()[i] = c;
            return v;
        };
    };
    SamplerConfig cfg{30, Integrator::Euler, 11};
    Tensor out = fw::ode_sample(const_field(0.7f), {4}, cfg);
    fw::Rng rng(11);
    Tensor noise = fw::randn({4}, rng);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(out.at(i) - (noise.at(i) - 0.7)) < 1e-5);

    // Power-of-two step count and dyadic velocity: every update is exactly
    // representable, so Euler lands on noise - c bitwise, Heun on the same
    // result (the trapezoid of a constant collapses to Euler).
    Tensor start = Tensor::from({3}, {5, -2, 9});
    SamplerConfig cfg32{32, Integrator::Euler, 0};
    Tensor euler = fw::ode_sample(const_field(0.5f), {3}, cfg32, nullptr, &start);
    SamplerConfig heun32{32, Integrator::Heun, 0};
    Tensor heun = fw::ode_sample(const_field(0.5f), {3}, heun32, nullptr, &start);
    CHECK(fw::same_values(euler, Tensor::from({3}, {4.5, -2.5, 8.5})));
    CHECK(fw::same_values(euler, heun));
}

TEST_CASE("bad fields are rejected with the failing step") {
    auto bad_shape = [](const Tensor&, double) { return Tensor::zeros({3}); };
    SamplerConfig cfg{10, Integrator::Euler, 1};
    CHECK_THROWS_AS(fw::ode_sample(bad_shape, {2}, cfg), std::invalid_argument);

    auto blows_up = [](const Tensor& x, double t) {
        Tensor v = Tensor::zeros(x.shape());
        if (t < 0.75) v.data()[0] = std::nanf("");
        return v;
    };
    try {
        fw::ode_sample(blows_up, {2}, cfg);  // 10 steps: t = 0.7 first fails at step 4
        FAIL("expected NumericError");
    } catch (const fw::NumericError& e) {
        CHECK(std::string(e.what()).find("step 4") != std::string::npos);
    }
}

TEST_CASE("observers see every grid step without touching the trajectory") {
    GaussianMixture g = two_mode_2d();
    SamplerConfig cfg{30, Integrator::Euler, 21};

    Tensor plain = fw::ode_sample(oracle_field(g), {2}, cfg);

    std::vector<int> steps;
    std::vector<double> times;
    std::vector<Tensor> velocities;
    auto spy = [&](int step, double t, const Tensor& x, const Tensor& v) {
        steps.push_back(step);
        times.push_back(t);
        velocities.push_back(v);
        (void)x;
    };
    Tensor observed = fw::ode_sample(oracle_field(g), {2}, cfg, spy);

    CHECK(fw::same_values(plain, observed));
    REQUIRE(steps.size() == 30);
    for (int j = 1; j <= 30; ++j) {
        CHECK(steps[j - 1] == j);
        CHECK(times[j - 1] == double(30 - (j - 1)) / 30);
    }
    CHECK(velocities.size() == 30);
}

TEST_CASE("oracle-driven sampling reproduces the mixture") {
    GaussianMixture g;
    g.weights = {0.25, 0.45, 0.3};
    g.means = {{-4.0, 0.0}, {0.0, 4.0}, {4.0, -2.0}};
    g.variances = {{0.2, 0.2}, {0.2, 0.2}, {0.2, 0.2}};

    const int n = 4096;
    std::vector<int> counts(3, 0);
    std::vector<double> mx(3, 0), my(3, 0);
    for (int i = 0; i < n; ++i) {
        SamplerConfig cfg{200, Integrator::Euler, fw::child_seed(900, i)};
        Tensor x = fw::ode_sample(oracle_field(g), {2}, cfg);
        int best = 0;
        double best_d = 1e30;
        for (int k = 0; k < 3; ++k) {
            const double d = std::pow(x.at(0) - g.means[k][0], 2) +
                             std::pow(x.at(1) - g.means[k][1], 2);
            if (d < best_d) best_d = d, best = k;
        }
        ++counts[best];
        mx[best] += x.at(0);
        my[best] += x.at(1);
    }
    const double sep = 4.0 * std::sqrt(2.0);
    for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(counts[k] / double(n) - g.weights[k]) < 0.03);
        CHECK(std::abs(mx[k] / counts[k] - g.means[k][0]) < 0.05 * sep);
        CHECK(std::abs(my[k] / counts[k] - g.means[k][1]) < 0.05 * sep);
    }
}

TEST_CASE("halving the step size halves the endpoint error") {
    GaussianMixture g = two_mode_2d();
    auto field = oracle_field(g);
    const int trajectories = 256;
    double err50 = 0, err100 = 0, heun50 = 0;
    for (int i = 0; i < trajectories; ++i) {
        fw::Rng rng(fw::child_seed(31337, i));
        Tensor noise = fw::randn({2}, rng);
        SamplerConfig ref_cfg{400, Integrator::Heun, 0};
        Tensor ref = fw::ode_sample(field, {2}, ref_cfg, nullptr, &noise);
        SamplerConfig c50{50, Integrator::Euler, 0};
        SamplerConfig c100{100, Integrator::Euler, 0};
        SamplerConfig h50{50, Integrator::Heun, 0};
        Tensor a = fw::ode_sample(field, {2}, c50, nullptr, &noise);
        Tensor b = fw::ode_sample(field, {2}, c100, nullptr, &noise);
        Tensor h = fw::ode_sample(field, {2}, h50, nullptr, &noise);
        auto dist = [&](const Tensor& u) {
            return std::sqrt(std::pow(u.at(0) - ref.at(0), 2) + std::pow(u.at(1) - ref.at(1), 2));
        };
        err50 += dist(a);
        err100 += dist(b);
        heun50 += dist(h);
    }
    const double ratio = err50 / err100;
    CHECK(ratio > 1.5);
    CHECK(ratio < 2.5);
    CHECK(heun50 < err50);  // the corrector should only help
}

TEST_CASE("flow objective reaches the conditional-variance floor only for the exact field") {
    GaussianMixture g = two_mode_2d();
    fw::Rng rng(55);
    Tensor data = g.sample(20000, rng);
    auto uni = TimestepSampler::uniform();
    auto clamped_oracle = [&g](const Tensor& x, double t) {
        return fw::oracle_velocity(g, x, std::max(t, 1e-12));
    };

    const int n = 100000;
    const double loss = fw::field_flow_loss(clamped_oracle, data, uni, n, 808);

    // Independent estimate of E[Var(x1 - x0 | x_t)] under the same draw law.
    fw::Rng vr(808);
    double floor = 0.0;
    Tensor x0 = Tensor::zeros({2}), x1 = Tensor::zeros({2});
    for (int i = 0; i < n; ++i) {
        const int r = vr.uniform_int(20000);
        for (int j = 0; j < 2; ++j) {
            x0.data()[j] = data.data()[r * 2 + j];
            x1.data()[j] = float(vr.normal());
        }
        const double t = std::max(fw::sample_timestep(uni, vr), 1e-12);
        Tensor var = fw::oracle_velocity_variance(g, fw::interpolate(x0, x1, t), t);
        floor += (var.at(0) + var.at(1)) / 2.0;
    }
    floor /= n;
    CHECK(loss == doctest::Approx(floor).epsilon(0.05));

    // A suboptimal field pays strictly more than the floor.
    auto zero = [](const Tensor& x, double) { return Tensor::zeros(x.shape()); };
    CHECK(fw::field_flow_loss(zero, data, uni, 20000, 808) > loss * 1.2);

    // A single data point makes x1 - x0 recoverable from (x_t, t), so the
    // exact field drives the objective to zero.
    GaussianMixture point;
    point.weights = {1.0};
    point.means = {{0.3, -0.6}};
    point.variances = {{1e-12, 1e-12}};
    Tensor prow = Tensor::from({1, 2}, {0.3f, -0.6f});
    auto point_field = [&point](const Tensor& x, double t) {
        return fw::oracle_velocity(point, x, std::max(t, 1e-12));
    };
    CHECK(fw::field_flow_loss(point_field, prow, uni, 5000, 9) < 1e-9);
}
