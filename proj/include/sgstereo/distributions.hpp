#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sgstereo/grid.hpp"

namespace sgstereo {

/// A normalized supervision distribution over the bins of a DisparityGrid.
/// `mu` and `sigma` are in bin-index units.
struct TargetDistribution {
    std::vector<double> probs;
    double mu = 0.0;
    double sigma = 0.0;
};

/// Discrete Gaussian target: probs[i] ∝ exp(-(i-mu)^2 / (2 sigma^2)),
/// normalized over the grid so the probabilities sum to exactly 1.
/// `mu` may lie outside the grid (endpoint experiments).
TargetDistribution sample_gaussian_target(double mu, double sigma, const DisparityGrid& grid);

/// Discrete Laplacian target: probs[i] ∝ exp(-|i-mu| / b), grid-normalized.
TargetDistribution sample_laplacian_target(double mu, double b, const DisparityGrid& grid);

/// Expectation of a distribution over the grid, mapped back to
/// full-resolution disparity units: Σ_i dist[i] * (-d_ext + i*stride).
double distribution_expectation(std::span<const double> dist, const DisparityGrid& grid);

struct TruncationReport {
    double mass_deficit = 0.0;       ///< 1 - (mass captured by [lo, hi])
    double expectation_shift = 0.0;  ///< E[renormalized on [lo, hi]] - mu, bin units
};

/// Effect of restricting a discrete Gaussian centered at `mu` to the integer
/// support [lo, hi]. The reference normalizer sums over |x - mu| <= |mu| + 12*sigma + 12,
/// past which the tail is below double-precision resolution.
TruncationReport truncation_analysis(double mu, double sigma, int lo, int hi);

/// Per-pixel target distributions for a ground-truth disparity map.
/// Layout is bin-major: probs[(d * height + y) * width + x].
struct ProbabilityField {
    int bins = 0;
    int height = 0;
    int width = 0;
    std::vector<double> probs;
    std::vector<std::uint8_t> valid;   ///< height*width; 0 where no target exists
    std::size_t out_of_range = 0;      ///< pixels invalidated because gt > d_max + d_ext

    double& at(int d, int y, int x) {
        return probs[(static_cast<size_t>(d) * height + y) * width + x];
    }
    double at(int d, int y, int x) const {
        return probs[(static_cast<size_t>(d) * height + y) * width + x];
    }
};

/// Samples a Gaussian target at every valid pixel with
/// mu = (gt + d_ext) / stride (bin-index units) and the given sigma.
/// Ground truth above d_max + d_ext marks the pixel invalid (counted),
/// rather than clamping the distribution.
ProbabilityField build_target_field(std::span<const double> gt,
                                    std::span<const std::uint8_t> valid, int height, int width,
                                    double sigma, const DisparityGrid& grid);

}  // namespace sgstereo
