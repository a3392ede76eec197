#pragma once
// Synthetic compositional scenes with exact ground truth.  Each scene is one
// soft-edged object on a 16×16 grid, described by three independent factors:
// where it sits (structural), what shape it is, and how its interior is
// textured (both content).  Analytic decoders recover each factor from the
// rendered image alone, so factor-level claims about generations can be
// checked without a learned critic.

#include <cstdint>
#include <string>
#include <vector>

#include "fw/net.hpp"
#include "fw/offsets.hpp"
#include "fw/tensor.hpp"

namespace fw {

enum class ShapeKind { Disk, Square, Cross };
const char* shape_name(ShapeKind s);

// One scene.  Coordinates are cell units: cell (r, c) samples the point
// x = c, y = r, so a 16×16 grid covers [0, 15]².  The center range keeps the
// object's soft edge on the grid and is symmetric under the x -> 15 - x
// mirror.  Stripes are anchored at the object center and travel with it.
struct SceneSpec {
    double cx = 7.5;             // ∈ [3, 12]
    double cy = 7.5;             // ∈ [3, 12]
    ShapeKind shape = ShapeKind::Disk;
    bool solid = false;          // solid fill instead of stripes
    double theta_deg = 0.0;      // stripe normal's angle, in [0, 180)

    static constexpr double kRadius = 4.0;        // object half-extent, cells
    static constexpr double kEdgeWidth = 0.7;     // soft-edge width, cells
    static constexpr double kStripeFreq = 0.25;   // cycles per cell
    static constexpr double kCenterLo = 3.0;
    static constexpr double kCenterHi = 12.0;

    void validate() const;  // throws std::invalid_argument
};

// Wraps any angle into the stripe pattern's natural domain [0, 180).
double normalize_angle_deg(double theta_deg);

// Deterministic render: background -1, interior follows the texture, the
// boundary blends linearly across kEdgeWidth.  Values lie in [-1, 1].
Tensor render(const SceneSpec& spec);

// ---- vocabulary -------------------------------------------------------------

// The token vocabulary over factor values.  Position is coarsened to a 3×3
// zone grid (structural tokens); shape maps one-to-one; texture is coarsened
// to four 45° angle bands plus solid (content tokens).  The continuous
// angle inside a band is deliberately not in the vocabulary: the generic
// band token only pins the band, and pinning a specific angle is exactly
// what a learned per-concept offset is for.
struct FactorTaxonomy {
    static constexpr int kVocabSize = 18;
    static constexpr int kZoneFirst = 1;      // 9 zone tokens, row-major 3×3
    static constexpr int kShapeFirst = 10;    // 3 shape tokens
    static constexpr int kAngleFirst = 13;    // 4 angle-band tokens
    static constexpr int kSolidToken = 17;

    static constexpr int kPositionFactor = 0;
    static constexpr int kShapeFactor = 1;
    static constexpr int kTextureFactor = 2;

    int zone_index(double cx, double cy) const;      // 0..8
    int zone_token(double cx, double cy) const;      // 1..9
    int shape_token(ShapeKind s) const;              // 10..12
    int angle_band(double theta_deg) const;          // 0..3
    int texture_token(const SceneSpec& spec) const;  // 13..17

    TokenRole role_of(int token_index) const;
    std::string token_name(int token_index) const;

    // Three tokens, one per factor: zone (slot 0), shape (slot 1), texture
    // (slot 2).
    Prompt prompt_for(const SceneSpec& spec) const;
};

// ---- datasets ---------------------------------------------------------------

struct SceneSample {
    SceneSpec spec;
    Tensor image;
    Prompt prompt;
};

// n scenes with factors drawn uniformly: center uniform over its square,
// shape uniform over the three kinds, texture uniform over the five texture
// tokens (angle uniform inside a chosen band).  Item i depends only on
// (seed, i), so regeneration and parallel generation agree.
std::vector<SceneSample> make_dataset(int n, const FactorTaxonomy& taxonomy, std::uint64_t seed);

// Training-variant factory for one-shot offset learning on a known scene:
// each call renders a perturbed copy with its prompt recomputed from the
// perturbed factors, never changing the factor being personalized.
//   - ±1-cell translation jitter per axis, unless position is the target
//     (centers clamp to the legal range);
//   - a mirror flip (x -> 15 - x, stripe angle -> 180 - theta) only when the
//     target factor's value survives it: shape targets always, texture
//     targets only for solid scenes, position targets never.
// Throws std::invalid_argument for an invalid scene or unknown factor id.
AugmentFn scene_augmenter(const SceneSpec& spec, const FactorTaxonomy& taxonomy,
                          int target_factor);

// ---- factor decoders --------------------------------------------------------

struct PositionEstimate {
    double cx = 0.0;
    double cy = 0.0;
    bool decodable = false;
};

// Intensity-weighted centroid of image + 1 (background weighs nothing),
// refined to sub-cell accuracy by correlation search against re-rendered
// templates, which cancels the centroid's inward bias for border-clipped
// objects.  Not decodable when the image is blank or near-uniform.
PositionEstimate decode_position(const Tensor& image);

struct AngleEstimate {
    double theta_deg = 0.0;   // in [0, 180)
    double coherence = 0.0;   // angular spectral peak contrast in [0, 1]
    bool decodable = false;
};

// Stripe normal's angle mod 180°: a matched filter at the renderer's stripe
// frequency gives a coarse peak, then correlation against re-rendered striped
// templates refines it.  Solid images (a solid template explains the image
// better than any striped one) and blank images come back flagged.
AngleEstimate decode_angle(const Tensor& image);

struct ShapeEstimate {
    ShapeKind shape = ShapeKind::Disk;
    double score = 0.0;       // best normalized cross-correlation, in [-1, 1]
    bool decodable = false;
};

// Normalized cross-correlation against the three shapes rendered at the
// decoded position with the best-fitting texture, so the comparison measures
// shape rather than texture mismatch.  Flagged when no template correlates
// (score < 0.3) or the position itself is undecodable.
ShapeEstimate decode_shape(const Tensor& image);

// ---- export -----------------------------------------------------------------

// Writes img_00000.pgm … plus an index.jsonl with one line per sample
// ({"file", "spec", "tokens"}).  Returns the index path.
std::string export_dataset(const std::string& dir, const std::vector<SceneSample>& samples);

}  // namespace fw
