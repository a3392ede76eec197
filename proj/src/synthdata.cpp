#include "fw/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fw/io.hpp"
#include "fw/rng.hpp"

namespace fw {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Signed distance from (dx, dy) to the shape boundary, negative inside.
double shape_sdf(ShapeKind shape, double dx, double dy) {
    const double r = SceneSpec::kRadius;
    switch (shape) {
        case ShapeKind::Disk:
            return std::hypot(dx, dy) - r;
        case ShapeKind::Square:
            return std::max(std::abs(dx), std::abs(dy)) - r;
        case ShapeKind::Cross: {
            // Union of a horizontal and a vertical bar of half-width 0.45·r.
            const double w = 0.45 * r;
            const double horiz = std::max(std::abs(dx) - r, std::abs(dy) - w);
            const double vert = std::max(std::abs(dx) - w, std::abs(dy) - r);
            return std::min(horiz, vert);
        }
    }
    throw std::logic_error("shape_sdf: unknown shape");
}

}  // namespace

const char* shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::Disk: return "disk";
        case ShapeKind::Square: return "square";
        case ShapeKind::Cross: return "cross";
    }
    return "?";
}

double normalize_angle_deg(double theta_deg) {
    double t = std::fmod(theta_deg, 180.0);
    if (t < 0.0) t += 180.0;
    return t;
}

void SceneSpec::validate() const {
    if (!(cx >= kCenterLo && cx <= kCenterHi && cy >= kCenterLo && cy <= kCenterHi)) {
        std::ostringstream ss;
        ss << "scene center (" << cx << ", " << cy << ") outside [" << kCenterLo << ", "
           << kCenterHi << "]^2";
        throw std::invalid_argument(ss.str());
    }
    if (!(theta_deg >= 0.0 && theta_deg < 180.0)) {
        std::ostringstream ss;
        ss << "stripe angle " << theta_deg << " outside [0, 180)";
        throw std::invalid_argument(ss.str());
    }
}

Tensor render(const SceneSpec& spec) {
    spec.validate();
    const int n = 16;
    const double rad = spec.theta_deg * kPi / 180.0;
    const double ux = std::cos(rad);
    const double uy = std::sin(rad);

    std::vector<float> img(n * n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const double dx = double(c) - spec.cx;
            const double dy = double(r) - spec.cy;
            const double sdf = shape_sdf(spec.shape, dx, dy);
            const double mask = clamp01(0.5 - sdf / SceneSpec::kEdgeWidth);
            const double tex =
                spec.solid ? 1.0
                           : std::cos(2.0 * kPi * SceneSpec::kStripeFreq * (dx * ux + dy * uy));
            img[r * n + c] = float(-1.0 + mask * (tex + 1.0));
        }
    }
    return Tensor::from({n, n}, std::move(img));
}

// ---- vocabulary -------------------------------------------------------------

int FactorTaxonomy::zone_index(double cx, double cy) const {
    // Clamped so decoded centers slightly outside the legal placement range
    // still land in the nearest zone.
    const double span = (SceneSpec::kCenterHi - SceneSpec::kCenterLo) / 3.0;
    const int col = std::clamp(int((cx - SceneSpec::kCenterLo) / span), 0, 2);
    const int row = std::clamp(int((cy - SceneSpec::kCenterLo) / span), 0, 2);
    return row * 3 + col;
}

int FactorTaxonomy::zone_token(double cx, double cy) const {
    return kZoneFirst + zone_index(cx, cy);
}

int FactorTaxonomy::shape_token(ShapeKind s) const { return kShapeFirst + int(s); }

int FactorTaxonomy::angle_band(double theta_deg) const {
    return std::min(3, int(normalize_angle_deg(theta_deg) / 45.0));
}

int FactorTaxonomy::texture_token(const SceneSpec& spec) const {
    return spec.solid ? kSolidToken : kAngleFirst + angle_band(spec.theta_deg);
}

TokenRole FactorTaxonomy::role_of(int token_index) const {
    if (token_index >= kZoneFirst && token_index < kZoneFirst + 9) return TokenRole::Structural;
    if (token_index >= kShapeFirst && token_index < kVocabSize) return TokenRole::Content;
    return TokenRole::Filler;  // the null token
}

std::string FactorTaxonomy::token_name(int token_index) const {
    if (token_index == 0) return "null";
    if (token_index >= kZoneFirst && token_index < kZoneFirst + 9) {
        static const char* kRows[] = {"top", "mid", "bottom"};
        static const char* kCols[] = {"left", "center", "right"};
        const int z = token_index - kZoneFirst;
        return std::string("zone-") + kRows[z / 3] + "-" + kCols[z % 3];
    }
    if (token_index >= kShapeFirst && token_index < kShapeFirst + 3)
        return shape_name(ShapeKind(token_index - kShapeFirst));
    if (token_index >= kAngleFirst && token_index < kAngleFirst + 4) {
        const int band = token_index - kAngleFirst;
        return "stripes-" + std::to_string(band * 45) + "-" + std::to_string(band * 45 + 45);
    }
    if (token_index == kSolidToken) return "solid";
    throw std::invalid_argument("token index " + std::to_string(token_index) +
                                " outside vocabulary of " + std::to_string(kVocabSize));
}

Prompt FactorTaxonomy::prompt_for(const SceneSpec& spec) const {
    spec.validate();
    Prompt p;
    p.tokens = {
        PromptToken{zone_token(spec.cx, spec.cy), TokenRole::Structural, kPositionFactor,
                    zone_index(spec.cx, spec.cy)},
        PromptToken{shape_token(spec.shape), TokenRole::Content, kShapeFactor, int(spec.shape)},
        PromptToken{texture_token(spec), TokenRole::Content, kTextureFactor,
                    spec.solid ? 4 : angle_band(spec.theta_deg)},
    };
    return p;
}

// ---- datasets ---------------------------------------------------------------

std::vector<SceneSample> make_dataset(int n, const FactorTaxonomy& taxonomy, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("make_dataset: need at least one scene");
    std::vector<SceneSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(child_seed(seed, std::uint64_t(i)));
        SceneSpec spec;
        spec.cx = rng.uniform(SceneSpec::kCenterLo, SceneSpec::kCenterHi);
        spec.cy = rng.uniform(SceneSpec::kCenterLo, SceneSpec::kCenterHi);
        spec.shape = ShapeKind(rng.uniform_int(3));
        const int tex = rng.uniform_int(5);
        if (tex == 4) {
            spec.solid = true;
        } else {
            spec.solid = false;
            spec.theta_deg = rng.uniform(45.0 * tex, 45.0 * (tex + 1));
        }
        out.push_back({spec, render(spec), taxonomy.prompt_for(spec)});
    }
    return out;
}

AugmentFn scene_augmenter(const SceneSpec& spec, const FactorTaxonomy& taxonomy,
                          int target_factor) {
    spec.validate();
    if (target_factor != FactorTaxonomy::kPositionFactor &&
        target_factor != FactorTaxonomy::kShapeFactor &&
        target_factor != FactorTaxonomy::kTextureFactor) {
        throw std::invalid_argument("scene_augmenter: unknown factor id " +
                                    std::to_string(target_factor));
    }
    const bool jitter = target_factor != FactorTaxonomy::kPositionFactor;
    const bool mirror = target_factor == FactorTaxonomy::kShapeFactor ||
                        (target_factor == FactorTaxonomy::kTextureFactor && spec.solid);
    return [spec, taxonomy, jitter, mirror](Rng& rng) -> TrainExample {
        SceneSpec s = spec;
        if (jitter) {
            s.cx = std::clamp(s.cx + double(rng.uniform_int(3)) - 1.0, SceneSpec::kCenterLo,
                              SceneSpec::kCenterHi);
            s.cy = std::clamp(s.cy + double(rng.uniform_int(3)) - 1.0, SceneSpec::kCenterLo,
                              SceneSpec::kCenterHi);
        }
        if (mirror && rng.uniform() < 0.5) {
            s.cx = 15.0 - s.cx;
            s.theta_deg = normalize_angle_deg(180.0 - s.theta_deg);
        }
        return TrainExample{render(s), taxonomy.prompt_for(s)};
    };
}

// ---- factor decoders --------------------------------------------------------

namespace {

// First-pass center estimate: intensity-weighted centroid of (image + 1),
// where the background contributes zero weight.
PositionEstimate raw_centroid(const Tensor& image) {
    PositionEstimate est;
    if (image.shape().size() != 2) return est;
    const int h = image.shape()[0];
    const int w = image.shape()[1];

    float lo = image.data()[0], hi = image.data()[0];
    double mass = 0.0, mx = 0.0, my = 0.0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const float v = image.data()[r * w + c];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            const double wgt = double(v) + 1.0;
            mass += wgt;
            mx += wgt * c;
            my += wgt * r;
        }
    }
    if (hi - lo < 0.05 || mass < 1e-6) return est;  // blank or near-uniform
    est.cx = mx / mass;
    est.cy = my / mass;
    est.decodable = true;
    return est;
}

double correlation(const Tensor& a, const Tensor& b) {
    const int n = a.numel();
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < n; ++i) {
        ma += a.data()[i];
        mb += b.data()[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (int i = 0; i < n; ++i) {
        const double da = a.data()[i] - ma;
        const double db = b.data()[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

// Demodulation magnitude |Σ (img+1)·exp(-i·2πf·(x·cosφ + y·sinφ))| at the
// renderer's stripe frequency: a matched filter whose angular peak sits at
// the stripe normal's angle.
double stripe_response(const Tensor& image, double phi_rad) {
    const int h = image.shape()[0];
    const int w = image.shape()[1];
    const double fx = 2.0 * kPi * SceneSpec::kStripeFreq * std::cos(phi_rad);
    const double fy = 2.0 * kPi * SceneSpec::kStripeFreq * std::sin(phi_rad);
    double re = 0.0, im = 0.0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double v = double(image.data()[r * w + c]) + 1.0;
            const double phase = fx * c + fy * r;
            re += v * std::cos(phase);
            im -= v * std::sin(phase);
        }
    }
    return std::hypot(re, im);
}

// One inverse-rendering pass shared by the angle and shape decoders: coarse
// spectral angle, then the best of {3 shapes} × {solid, stripes at the
// refined angle} by normalized cross-correlation against re-renders at the
// decoded position.
struct SceneFit {
    bool valid = false;
    ShapeKind shape = ShapeKind::Disk;
    bool solid = false;
    double theta_deg = 0.0;
    double cx = 0.0, cy = 0.0;  // template-refined center
    double shape_score = 0.0;   // best correlation across all candidates
    double peak_contrast = 0.0; // spectral peak over its angular mean
};

SceneFit fit_scene(const Tensor& image) {
    SceneFit fit;
    if (image.shape().size() != 2) return fit;
    PositionEstimate pos = raw_centroid(image);
    if (!pos.decodable) return fit;

    // Coarse stripe angle from the angular spectrum at the known frequency.
    const int kSteps = 180;
    std::vector<double> response(kSteps);
    double total = 0.0;
    for (int k = 0; k < kSteps; ++k) {
        response[k] = stripe_response(image, kPi * k / kSteps);
        total += response[k];
    }
    int peak = 0;
    for (int k = 1; k < kSteps; ++k)
        if (response[k] > response[peak]) peak = k;
    if (total < 1e-9) return fit;
    fit.peak_contrast = (response[peak] - total / kSteps) / response[peak];

    SceneSpec proto;
    // The decoded center may sit slightly outside the legal spec range for
    // border objects; templates just need to sit on top of the object.
    proto.cx = std::min(SceneSpec::kCenterHi, std::max(SceneSpec::kCenterLo, pos.cx));
    proto.cy = std::min(SceneSpec::kCenterHi, std::max(SceneSpec::kCenterLo, pos.cy));

    // Refine the angle per shape hypothesis by template search around the
    // spectral estimate, then keep the overall best-correlating candidate.
    fit.shape_score = -2.0;
    for (ShapeKind s : {ShapeKind::Disk, ShapeKind::Square, ShapeKind::Cross}) {
        proto.shape = s;
        proto.solid = true;
        const double solid_score = correlation(image, render(proto));
        if (solid_score > fit.shape_score) {
            fit.shape_score = solid_score;
            fit.shape = s;
            fit.solid = true;
        }

        proto.solid = false;
        double best_theta = 0.0, best_score = -2.0;
        auto try_theta = [&](double theta) {
            proto.theta_deg = normalize_angle_deg(theta);
            const double score = correlation(image, render(proto));
            if (score > best_score) {
                best_score = score;
                best_theta = proto.theta_deg;
            }
        };
        for (int dk = -10; dk <= 10; ++dk)
            try_theta(double(peak + dk) * 180.0 / kSteps);
        const double coarse_theta = best_theta;
        for (double dd = -0.75; dd <= 0.75; dd += 0.25)
            try_theta(coarse_theta + dd);
        if (best_score > fit.shape_score) {
            fit.shape_score = best_score;
            fit.shape = s;
            fit.solid = false;
            fit.theta_deg = best_theta;
        }
    }

    // Sub-cell position refinement against the winning template. The raw
    // centroid is biased inward for objects whose rim is clipped by the grid
    // border; re-rendered templates are clipped identically, so correlation
    // search cancels that bias.
    proto.shape = fit.shape;
    proto.solid = fit.solid;
    proto.theta_deg = fit.theta_deg;
    const double cx0 = proto.cx, cy0 = proto.cy;
    double best_dx = 0.0, best_dy = 0.0, best = -2.0;
    auto clamp_center = [](double v) {
        return std::min(SceneSpec::kCenterHi, std::max(SceneSpec::kCenterLo, v));
    };
    std::vector<std::vector<double>> grid(9, std::vector<double>(9));
    for (int iy = 0; iy < 9; ++iy) {
        for (int ix = 0; ix < 9; ++ix) {
            const double dx = 0.25 * (ix - 4), dy = 0.25 * (iy - 4);
            proto.cx = clamp_center(cx0 + dx);
            proto.cy = clamp_center(cy0 + dy);
            grid[iy][ix] = correlation(image, render(proto));
            if (grid[iy][ix] > best) {
                best = grid[iy][ix];
                best_dx = dx;
                best_dy = dy;
            }
        }
    }
    // Parabolic polish along each axis when the peak is interior to the grid.
    auto polish = [](double ym, double y0, double yp) {
        const double denom = ym - 2.0 * y0 + yp;
        return std::abs(denom) > 1e-12 ? 0.5 * (ym - yp) / denom : 0.0;
    };
    const int px = int(best_dx / 0.25) + 4, py = int(best_dy / 0.25) + 4;
    if (px > 0 && px < 8)
        best_dx += 0.25 * polish(grid[py][px - 1], grid[py][px], grid[py][px + 1]);
    if (py > 0 && py < 8)
        best_dy += 0.25 * polish(grid[py - 1][px], grid[py][px], grid[py + 1][px]);
    fit.cx = clamp_center(cx0 + best_dx);
    fit.cy = clamp_center(cy0 + best_dy);
    fit.shape_score = std::max(fit.shape_score, best);
    fit.valid = true;
    return fit;
}

}  // namespace

PositionEstimate decode_position(const Tensor& image) {
    SceneFit fit = fit_scene(image);
    if (!fit.valid) return raw_centroid(image);  // carries the blank flag
    PositionEstimate est;
    est.cx = fit.cx;
    est.cy = fit.cy;
    est.decodable = true;
    return est;
}

AngleEstimate decode_angle(const Tensor& image) {
    AngleEstimate est;
    SceneFit fit = fit_scene(image);
    if (!fit.valid) return est;
    est.coherence = fit.peak_contrast;
    est.theta_deg = fit.theta_deg;
    // A solid fill explains the image better than any stripe pattern: no
    // angle to report.
    est.decodable = !fit.solid;
    return est;
}

ShapeEstimate decode_shape(const Tensor& image) {
    ShapeEstimate est;
    SceneFit fit = fit_scene(image);
    if (!fit.valid) return est;
    est.shape = fit.shape;
    est.score = fit.shape_score;
    est.decodable = fit.shape_score >= 0.3;
    return est;
}

// ---- export -----------------------------------------------------------------

std::string export_dataset(const std::string& dir, const std::vector<SceneSample>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string index_path = (fs::path(dir) / "index.jsonl").string();
    std::ofstream index(index_path);
    if (!index) throw std::runtime_error("export_dataset: cannot open " + index_path);

    FactorTaxonomy taxonomy;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
        save_pgm((fs::path(dir) / name).string(), samples[i].image);

        nlohmann::json line;
        line["file"] = name;
        line["spec"] = {{"cx", samples[i].spec.cx},
                        {"cy", samples[i].spec.cy},
                        {"shape", shape_name(samples[i].spec.shape)},
                        {"solid", samples[i].spec.solid},
                        {"theta_deg", samples[i].spec.theta_deg}};
        nlohmann::json tokens = nlohmann::json::array();
        for (const PromptToken& t : samples[i].prompt.tokens)
            tokens.push_back({{"index", t.index}, {"name", taxonomy.token_name(t.index)}});
        line["tokens"] = tokens;
        index << line.dump() << "\n";
    }
    if (!index) throw std::runtime_error("export_dataset: write to " + index_path + " failed");
    return index_path;
}

}  // namespace fw
