#pragma once

#include <span>
#include <vector>

#include "sgstereo/grid.hpp"

namespace sgstereo {

/// Numerically stabilized softmax (max-subtracted); sums to 1 within 1e-12
/// and is invariant to adding a constant to all entries.
std::vector<double> softmax(std::span<const double> z);

/// Expectation of softmax(z) over the grid's bin values, i.e. differentiable
/// argmax in full-resolution disparity units.
double soft_argmax(std::span<const double> z, const DisparityGrid& grid);

/// Exact gradient d(soft_argmax)/dz: g_i = p_i * (i - d_bin) * stride, with
/// p = softmax(z) and d_bin the bin-space expectation. Sums to zero.
std::vector<double> soft_argmax_gradient(std::span<const double> z, const DisparityGrid& grid);

struct GradientProfileEntry {
    double distance = 0.0;   ///< |bin index - bin-space expectation|
    double magnitude = 0.0;  ///< |g_i|
};

/// Gradient magnitudes reordered by distance from the expectation
/// (stable: ties keep ascending bin order). Diagnostic for how strongly
/// far-away bins are pulled.
std::vector<GradientProfileEntry> gradient_bias_profile(std::span<const double> z,
                                                        const DisparityGrid& grid);

/// Comparison baseline: restrict the softmax distribution to a window of k
/// bins centered on the argmax (ties broken toward the lower index, window
/// clamped at the grid edges), renormalize, and take the expectation.
/// k must be odd and <= bins, or exactly bins (full window).
double topk_soft_argmax(std::span<const double> z, int k, const DisparityGrid& grid);

}  // namespace sgstereo
