#include "fw/probing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fw/io.hpp"

namespace fw {

double localization_index(const Tensor& shift) {
    const int n = shift.numel();
    if (n == 0) throw std::invalid_argument("localization_index: empty tensor");
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += std::fabs(double(shift.data()[i]));
    if (total == 0.0) return 0.0;
    if (n == 1) return 1.0;

    double entropy = 0.0;
    for (int i = 0; i < n; ++i) {
        const double p = std::fabs(double(shift.data()[i])) / total;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    const double index = 1.0 - entropy / std::log(double(n));
    return std::clamp(index, 0.0, 1.0);
}

ProbeReport probe_trajectory(const VelocityNet& net, const Prompt& prompt,
                             const std::vector<ConceptSelector>& selectors,
                             const SamplerConfig& sampler, const GuidanceConfig& guidance) {
    prompt.validate(net.dims.vocab_size, net.dims.max_tokens);
    guidance.validate(prompt, net.dims);

    ProbeReport report;
    report.prompt = prompt;
    report.seed = sampler.seed;
    std::set<int> seen;
    for (const ConceptSelector& sel : selectors) {
        validate_concept_slot(prompt, net.dims, sel.slot);
        const int token = prompt.at_slot(sel.slot).index;
        if (!seen.insert(token).second) {
            std::ostringstream ss;
            ss << "probe selectors target token " << token
               << " twice; probed concepts must be distinct";
            throw std::invalid_argument(ss.str());
        }
        report.concept_tokens.push_back(token);
    }
    report.steps.reserve(sampler.num_steps);

    VelocityFieldFn field = [&](const Tensor& x, double t) {
        return cwg_velocity(net, x, t, prompt, guidance);
    };
    StepObserver observer = [&](int step, double t, const Tensor& x, const Tensor&) {
        ProbeStep rec;
        rec.step = step;
        rec.t = t;
        const double prompt_norm = l2_norm(prompt_shift(net, x, t, prompt));
        for (const ConceptSelector& sel : selectors) {
            Tensor dv = concept_shift(net, x, t, prompt, sel);
            Tensor heat = Tensor::zeros(dv.shape());
            for (int i = 0; i < dv.numel(); ++i)
                heat.data()[i] = std::fabs(dv.data()[i]);
            rec.shift_norm.push_back(l2_norm(dv));
            rec.normalized_norm.push_back(rec.shift_norm.back() / (prompt_norm + 1e-8));
            rec.localization.push_back(localization_index(dv));
            rec.heatmap.push_back(std::move(heat));
        }
        report.steps.push_back(std::move(rec));
    };

    report.sample = ode_sample(field, {net.dims.grid_h, net.dims.grid_w}, sampler, observer);
    return report;
}

StageSummary summarize_stages(const ProbeReport& report, const StageSchedule& schedule) {
    schedule.validate();
    if (int(report.steps.size()) != schedule.num_steps) {
        std::ostringstream ss;
        ss << "stage summary needs the full trajectory: report has " << report.steps.size()
           << " steps, schedule expects " << schedule.num_steps;
        throw std::invalid_argument(ss.str());
    }

    // 1-based step ranges owned by each stage, in enum order.
    const std::array<std::pair<int, int>, 3> ranges = {{
        {1, schedule.blueprint_end},
        {schedule.blueprint_end + 1, schedule.instantiation_end},
        {schedule.instantiation_end + 1, schedule.num_steps},
    }};

    StageSummary summary;
    const int n_concepts = int(report.concept_tokens.size());
    for (int c = 0; c < n_concepts; ++c) {
        ConceptStageStats stats;
        stats.concept_token = report.concept_tokens[c];

        auto value = [&](int step) { return report.steps[step - 1].shift_norm[c]; };
        stats.peak_step = 1;
        for (int step = 2; step <= schedule.num_steps; ++step)
            if (value(step) > value(stats.peak_step)) stats.peak_step = step;

        double total = 0.0;
        std::array<double, 3> integral{};
        for (int s = 0; s < 3; ++s) {
            for (int step = ranges[s].first; step < ranges[s].second; ++step)
                integral[s] += 0.5 * (value(step) + value(step + 1));
            total += integral[s];
        }
        if (total > 0.0) {
            for (int s = 0; s < 3; ++s) stats.stage_fraction[s] = integral[s] / total;
        } else {
            // No mass anywhere: attribute by stage size, the limit of a
            // vanishing constant curve.
            for (int s = 0; s < 3; ++s)
                stats.stage_fraction[s] =
                    double(ranges[s].second - ranges[s].first + 1) / schedule.num_steps;
        }
        stats.peak_stage = Stage::Blueprint;
        for (int s = 1; s < 3; ++s)
            if (stats.stage_fraction[s] > stats.stage_fraction[int(stats.peak_stage)])
                stats.peak_stage = Stage(s);
        summary.concepts.push_back(stats);
    }
    return summary;
}

std::string export_heatmaps(const ProbeReport& report, const std::string& directory) {
    namespace fs = std::filesystem;
    fs::create_directories(directory);

    const std::string csv_path = (fs::path(directory) / "curves.csv").string();
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot open " + csv_path + " for writing");
    csv << "step,t,concept_id,shift_norm,normalized_norm,localization\n";

    char name[96];
    char num[96];
    for (const ProbeStep& rec : report.steps) {
        for (size_t c = 0; c < report.concept_tokens.size(); ++c) {
            std::snprintf(num, sizeof num, "%.17g,%.17g,%.17g", rec.shift_norm[c],
                          rec.normalized_norm[c], rec.localization[c]);
            std::snprintf(name, sizeof name, "%.17g", rec.t);
            csv << rec.step << ',' << name << ',' << report.concept_tokens[c] << ',' << num
                << '\n';

            std::snprintf(name, sizeof name, "probe_%d_%02d.pgm", report.concept_tokens[c],
                          rec.step);
            const Tensor& heat = rec.heatmap[c];
            // Per-file scale so faint shifts are not quantized away; the
            // range comment lets readers undo it.
            const double hi = std::max(max_abs(heat), 1e-12);
            save_pgm((fs::path(directory) / name).string(), heat, 0.0, hi);
        }
    }
    csv.close();
    if (!csv) throw std::runtime_error("failed writing " + csv_path);
    return csv_path;
}

}  // namespace fw
