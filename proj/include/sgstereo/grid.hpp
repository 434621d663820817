#pragma once

#include <stdexcept>
#include <vector>

namespace sgstereo {

/// Axis metadata for a discretized disparity range.
///
/// The axis covers full-resolution disparities [-d_ext, d_max + d_ext) in
/// steps of `stride` pixels. Bin i corresponds to disparity -d_ext + i*stride.
struct DisparityGrid {
    int d_ext = 16;  ///< extension below 0 and above d_max, full-res pixels
    int d_max = 48;  ///< nominal disparity range end, full-res pixels
    int stride = 1;  ///< full-res pixels per bin

    DisparityGrid() = default;
    DisparityGrid(int d_ext_, int d_max_, int stride_)
        : d_ext(d_ext_), d_max(d_max_), stride(stride_) {
        validate();
    }

    void validate() const {
        if (d_ext < 0) throw std::invalid_argument("DisparityGrid: d_ext must be >= 0");
        if (d_max <= 0) throw std::invalid_argument("DisparityGrid: d_max must be > 0");
        if (stride <= 0) throw std::invalid_argument("DisparityGrid: stride must be > 0");
        if ((d_max + 2 * d_ext) % stride != 0)
            throw std::invalid_argument(
                "DisparityGrid: d_max + 2*d_ext must be divisible by stride");
        if (bins() < 2) throw std::invalid_argument("DisparityGrid: needs at least 2 bins");
    }

    int bins() const { return (d_max + 2 * d_ext) / stride; }

    /// Full-resolution disparity value of bin i.
    double bin_value(int i) const { return -d_ext + static_cast<double>(i) * stride; }

    /// Bin-index coordinate of a full-resolution disparity (may be fractional).
    double to_bin(double disparity_fullres) const {
        return (disparity_fullres + d_ext) / stride;
    }

    std::vector<double> bin_values() const {
        std::vector<double> v(static_cast<size_t>(bins()));
        for (int i = 0; i < bins(); ++i) v[static_cast<size_t>(i)] = bin_value(i);
        return v;
    }

    bool operator==(const DisparityGrid&) const = default;
};

}  // namespace sgstereo
