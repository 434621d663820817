#pragma once

#include <cstdint>
#include <vector>

#include "sgstereo/distributions.hpp"
#include "sgstereo/grid.hpp"

namespace sgstereo {

/// Dense [C, H, W] feature stack at a given downsample scale.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    int scale = 1;  ///< downsample factor relative to the input image (1 or 4)
    std::vector<double> data;

    double& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

/// Matching scores over [C, Dbins, H, W]. Cells whose shifted source falls
/// outside the frame are zero-filled with the validity bit cleared.
struct CostVolume {
    int channels = 0;
    DisparityGrid grid;
    int height = 0;
    int width = 0;
    int spatial_scale = 1;
    std::vector<double> data;          ///< (c, d, y, x), x fastest
    std::vector<std::uint8_t> valid;   ///< (d, y, x)

    size_t cell_index(int c, int d, int y, int x) const {
        return ((static_cast<size_t>(c) * grid.bins() + d) * height + y) * width + x;
    }
    double& at(int c, int d, int y, int x) { return data[cell_index(c, d, y, x)]; }
    double at(int c, int d, int y, int x) const { return data[cell_index(c, d, y, x)]; }

    size_t valid_index(int d, int y, int x) const {
        return (static_cast<size_t>(d) * height + y) * width + x;
    }
    bool cell_valid(int d, int y, int x) const { return valid[valid_index(d, y, x)] != 0; }
};

enum class Fusion { Correlation, Concat };

/// Cost volume by horizontal shifting: cell (c, d, x, y) fuses
/// fl(., x, y) with fr(., x - d_px, y), where
/// d_px = (-d_ext + d*stride) / spatial_scale. Correlation averages the
/// per-channel products (group count 1); Concat stacks both feature vectors
/// (output channels double).
CostVolume build_cost_volume(const FeatureMap& fl, const FeatureMap& fr,
                             const DisparityGrid& grid, Fusion fusion);

/// H and W scaled by `factor` with corner-aligned bilinear interpolation;
/// the disparity dimension is untouched.
CostVolume upsample_bilinear_spatial(const CostVolume& v, int factor);

/// Disparity, H and W all upsampled. The disparity axis uses the
/// knot-preserving corner-aligned sizing (bins-1)*factor + 1, so every
/// coarse bin appears exactly in the output and interior samples are
/// collinear; spatial axes match upsample_bilinear_spatial.
CostVolume upsample_trilinear(const CostVolume& v, int factor);

/// Grid describing the disparity axis produced by upsample_trilinear.
DisparityGrid refined_grid(const DisparityGrid& grid, int factor);

/// Minimum mean absolute distance between target.probs and any vector that
/// linearly interpolates (bins-1)/factor + 1 knot values (the shapes a
/// factor-upsampled coarse axis can represent). Exact least-absolute-
/// deviation solution; same normalization as l1_vector.
double piecewise_linear_fit_gap(const TargetDistribution& target, int factor);

// 1-D interpolation weights shared with the training graph.

/// Corner-aligned map from n_in samples onto n_out = n_in * factor samples:
/// out[j] interpolates in[j * (n_in-1) / (n_out-1)].
struct LinearTap {
    int lo = 0;
    double w_lo = 1.0;  ///< weight of lo; weight of lo+1 is 1 - w_lo
};
std::vector<LinearTap> corner_aligned_taps(int n_in, int factor);

/// Knot-preserving taps onto (n_in - 1) * factor + 1 samples:
/// out[k*factor + t] = lerp(in[k], in[k+1], t/factor).
std::vector<LinearTap> knot_taps(int n_in, int factor);

}  // namespace sgstereo
