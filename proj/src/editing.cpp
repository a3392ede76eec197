#include "fw/editing.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fw/errors.hpp"
#include "fw/flow.hpp"
#include "fw/rng.hpp"
#include "fw/synthdata.hpp"

namespace fw {

void EditConfig::validate(const NetDims& dims) const {
    source_prompt.validate(dims.vocab_size, dims.max_tokens);
    guidance.validate(target_prompt, dims);
    if (!(std::isfinite(source_w) && source_w >= 0.0)) {
        std::ostringstream ss;
        ss << "edit: source guidance scale must be finite and >= 0, got " << source_w;
        throw std::invalid_argument(ss.str());
    }
    guidance.schedule.validate();
    const int n = guidance.schedule.num_steps;
    if (window_first < 1 || window_last > n) {
        std::ostringstream ss;
        ss << "edit: window [" << window_first << ", " << window_last
           << "] leaves the schedule's steps [1, " << n << "]";
        throw std::invalid_argument(ss.str());
    }
}

Tensor flow_edit(const VelocityNet& net, const Tensor& x_src, const EditConfig& config) {
    const NetDims& d = net.dims;
    config.validate(d);
    if (x_src.shape() != Shape{d.grid_h, d.grid_w}) {
        std::ostringstream ss;
        ss << "edit: source image shape " << shape_str(x_src.shape()) << " does not match the "
           << d.grid_h << "x" << d.grid_w << " grid";
        throw std::invalid_argument(ss.str());
    }
    if (!all_finite(x_src))
        throw std::invalid_argument("edit: source image holds non-finite values");

    const int n = config.guidance.schedule.num_steps;
    const double h = 1.0 / n;

    Tensor z = x_src;
    for (int step = config.window_first; step <= config.window_last; ++step) {
        const double t = double(n - step + 1) / n;
        // Noise depends only on (seed, step): shared by both branches within
        // the step, and stable across different window choices.
        Rng rng(child_seed(config.seed, std::uint64_t(step)));
        Tensor eps = randn(x_src.shape(), rng);

        Tensor x_t_src = interpolate(x_src, eps, t);
        // The target branch sees the same state displaced by the edit so far;
        // an untouched z makes the displacement exactly zero.
        Tensor x_t_tar = add(x_t_src, sub(z, x_src));

        Tensor v_tar = cwg_velocity(net, x_t_tar, t, config.target_prompt, config.guidance);
        Tensor v_src = cfg_velocity(net, x_t_src, t, config.source_prompt, config.source_w);
        Tensor dv = sub(v_tar, v_src);
        if (!all_finite(dv)) {
            std::ostringstream ss;
            ss << "edit diverged at step " << step << " (non-finite update)";
            throw NumericError(ss.str());
        }
        z = sub(z, scale(dv, h));
    }
    return z;
}

namespace {

nlohmann::json factor_readout(const Tensor& image) {
    const PositionEstimate pos = decode_position(image);
    const AngleEstimate angle = decode_angle(image);
    const ShapeEstimate shape = decode_shape(image);
    nlohmann::json out;
    out["position"] = {{"cx", pos.cx}, {"cy", pos.cy}, {"decodable", pos.decodable}};
    out["angle"] = {{"theta_deg", angle.theta_deg},
                    {"coherence", angle.coherence},
                    {"decodable", angle.decodable}};
    out["shape"] = {{"kind", shape_name(shape.shape)},
                    {"score", shape.score},
                    {"decodable", shape.decodable}};
    return out;
}

}  // namespace

nlohmann::json edit_report(const Tensor& source, const Tensor& edited) {
    if (source.shape() != edited.shape()) {
        std::ostringstream ss;
        ss << "edit report: image shapes " << shape_str(source.shape()) << " vs "
           << shape_str(edited.shape()) << " differ";
        throw std::invalid_argument(ss.str());
    }

    nlohmann::json report;
    report["source"] = factor_readout(source);
    report["edited"] = factor_readout(edited);

    double sq = 0.0;
    for (int i = 0; i < source.numel(); ++i) {
        const double diff = double(edited.data()[i]) - double(source.data()[i]);
        sq += diff * diff;
    }
    report["l2_change"] = std::sqrt(sq);

    const auto& s = report["source"]["position"];
    const auto& e = report["edited"]["position"];
    if (s["decodable"].get<bool>() && e["decodable"].get<bool>()) {
        report["position_error"] = std::hypot(e["cx"].get<double>() - s["cx"].get<double>(),
                                              e["cy"].get<double>() - s["cy"].get<double>());
    } else {
        report["position_error"] = nullptr;
    }
    return report;
}

}  // namespace fw
