#pragma once

#include <cstdint>
#include <vector>

#include "sgstereo/costvolume.hpp"
#include "sgstereo/grid.hpp"

namespace sgstereo {

/// Per-pixel disparity values with a validity mask. Invalid entries are
/// ignored by every loss and metric.
struct DisparityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
    bool is_valid(int y, int x) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
};

/// Rectified grayscale pair with ground truth; intensities in [0, 1].
/// Where valid, right(x - gt(x,y), y) reconstructs left(x,y) up to the
/// synthesis interpolation.
struct StereoSample {
    int height = 0;
    int width = 0;
    std::vector<double> left;
    std::vector<double> right;
    DisparityMap gt;
};

enum class SceneKind { Standard, Ambiguous, Endpoint };

struct SceneParams {
    int height = 32;
    int width = 32;
    int d_max = 48;
    SceneKind kind = SceneKind::Standard;
    int texture_period = 12;  ///< px period of the repeated band (ambiguous scenes)
};

/// Random-dot stereogram: a right image of uniform dots (with an optional
/// horizontally periodic band), a disparity field made of two
/// fronto-parallel planes plus one slanted band, and a left image gathered
/// through the field. Pixels whose match is out of frame or occluded
/// (z-buffered against nearer pixels) are marked invalid. Deterministic per
/// seed.
StereoSample generate_stereo_sample(const SceneParams& params, std::uint64_t seed);

/// Matching cost from raw intensities: both images are 4x box-downsampled,
/// unit-normalized zero-mean 5x5 patch vectors become the 25 feature
/// channels, and correlation fusion over the grid yields a quarter-resolution
/// volume of normalized correlations in [-1, 1] (higher = better match).
CostVolume compute_matching_cost(const StereoSample& sample, const DisparityGrid& grid);

}  // namespace sgstereo
