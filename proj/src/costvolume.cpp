#include "sgstereo/costvolume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sgstereo {

CostVolume build_cost_volume(const FeatureMap& fl, const FeatureMap& fr,
                             const DisparityGrid& grid, Fusion fusion) {
    if (fl.channels != fr.channels || fl.height != fr.height || fl.width != fr.width ||
        fl.scale != fr.scale)
        throw std::invalid_argument("build_cost_volume: feature maps differ in shape or scale");
    if (fl.channels < 1) throw std::invalid_argument("build_cost_volume: needs channels >= 1");
    grid.validate();

    const int bins = grid.bins();
    const int H = fl.height, W = fl.width, C = fl.channels;

    CostVolume v;
    v.grid = grid;
    v.height = H;
    v.width = W;
    v.spatial_scale = fl.scale;
    v.channels = fusion == Fusion::Concat ? 2 * C : 1;
    v.data.assign(static_cast<size_t>(v.channels) * bins * H * W, 0.0);
    v.valid.assign(static_cast<size_t>(bins) * H * W, 0);

    for (int d = 0; d < bins; ++d) {
        const int shift_fullres = -grid.d_ext + d * grid.stride;
        if (shift_fullres % fl.scale != 0)
            throw std::invalid_argument(
                "build_cost_volume: disparity step not aligned with feature scale");
        const int d_px = shift_fullres / fl.scale;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const int xs = x - d_px;
                if (xs < 0 || xs >= W) continue;  // zero-fill, validity stays 0
                v.valid[v.valid_index(d, y, x)] = 1;
                if (fusion == Fusion::Correlation) {
                    double s = 0.0;
                    for (int c = 0; c < C; ++c) s += fl.at(c, y, x) * fr.at(c, y, xs);
                    v.at(0, d, y, x) = s / C;
                } else {
                    for (int c = 0; c < C; ++c) {
                        v.at(c, d, y, x) = fl.at(c, y, x);
                        v.at(C + c, d, y, x) = fr.at(c, y, xs);
                    }
                }
            }
        }
    }
    return v;
}

std::vector<LinearTap> corner_aligned_taps(int n_in, int factor) {
    const int n_out = n_in * factor;
    std::vector<LinearTap> taps(static_cast<size_t>(n_out));
    if (n_in == 1) return taps;  // single sample replicated
    for (int j = 0; j < n_out; ++j) {
        const double t = static_cast<double>(j) * (n_in - 1) / (n_out - 1);
        int lo = std::min(static_cast<int>(t), n_in - 2);
        taps[static_cast<size_t>(j)] = {lo, 1.0 - (t - lo)};
    }
    return taps;
}

std::vector<LinearTap> knot_taps(int n_in, int factor) {
    const int n_out = (n_in - 1) * factor + 1;
    std::vector<LinearTap> taps(static_cast<size_t>(n_out));
    for (int j = 0; j < n_out; ++j) {
        const int k = std::min(j / factor, n_in - 2);
        const double t = static_cast<double>(j - k * factor) / factor;
        taps[static_cast<size_t>(j)] = {k, 1.0 - t};
    }
    return taps;
}

namespace {

double tap_value(const std::vector<double>& src, size_t base, size_t stride,
                 const LinearTap& tap) {
    const double a = src[base + stride * static_cast<size_t>(tap.lo)];
    if (tap.w_lo == 1.0) return a;
    const double b = src[base + stride * static_cast<size_t>(tap.lo + 1)];
    return tap.w_lo * a + (1.0 - tap.w_lo) * b;
}

bool tap_valid(const std::vector<std::uint8_t>& src, size_t base, size_t stride,
               const LinearTap& tap) {
    const bool a = src[base + stride * static_cast<size_t>(tap.lo)] != 0;
    if (tap.w_lo == 1.0) return a;
    return a && src[base + stride * static_cast<size_t>(tap.lo + 1)] != 0;
}

/// Applies 1-D taps along one axis of a [C, D, H, W] block.
CostVolume resample_axis(const CostVolume& v, const std::vector<LinearTap>& taps, int axis,
                         int out_extent) {
    const int bins = v.grid.bins();
    int D = bins, H = v.height, W = v.width;
    CostVolume out = v;
    int &od = (axis == 0 ? D : axis == 1 ? H : W);
    od = out_extent;
    out.height = H;
    out.width = W;
    // grid/bins handled by caller for axis 0
    out.data.assign(static_cast<size_t>(v.channels) * D * H * W, 0.0);
    out.valid.assign(static_cast<size_t>(D) * H * W, 0);

    for (int c = 0; c < v.channels; ++c)
        for (int d = 0; d < D; ++d)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const int j = axis == 0 ? d : axis == 1 ? y : x;
                    const LinearTap& tap = taps[static_cast<size_t>(j)];
                    int sd = d, sy = y, sx = x;
                    size_t stride_elems;
                    // source index with the tapped axis replaced
                    if (axis == 0) { sd = 0; stride_elems = static_cast<size_t>(v.height) * v.width; }
                    else if (axis == 1) { sy = 0; stride_elems = static_cast<size_t>(v.width); }
                    else { sx = 0; stride_elems = 1; }
                    const size_t base = v.cell_index(c, sd, sy, sx);
                    const size_t out_idx =
                        ((static_cast<size_t>(c) * D + d) * H + y) * W + x;
                    out.data[out_idx] = tap_value(v.data, base, stride_elems, tap);
                    if (c == 0) {
                        const size_t vbase = v.valid_index(sd, sy, sx);
                        out.valid[(static_cast<size_t>(d) * H + y) * W + x] =
                            tap_valid(v.valid, vbase, stride_elems, tap) ? 1 : 0;
                    }
                }
    return out;
}

}  // namespace

CostVolume upsample_bilinear_spatial(const CostVolume& v, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample_bilinear_spatial: factor must be >= 1");
    if (factor == 1) return v;
    CostVolume out = resample_axis(v, corner_aligned_taps(v.height, factor), 1, v.height * factor);
    out = resample_axis(out, corner_aligned_taps(out.width, factor), 2, out.width * factor);
    if (out.spatial_scale % factor != 0)
        throw std::invalid_argument("upsample_bilinear_spatial: factor does not divide scale");
    out.spatial_scale = v.spatial_scale / factor;
    return out;
}

DisparityGrid refined_grid(const DisparityGrid& grid, int factor) {
    if (factor < 1) throw std::invalid_argument("refined_grid: factor must be >= 1");
    if (factor == 1) return grid;
    if (grid.stride % factor != 0)
        throw std::invalid_argument("refined_grid: factor does not divide bin stride");
    const int stride = grid.stride / factor;
    const int bins = (grid.bins() - 1) * factor + 1;
    // bins = (d_max' + 2 d_ext) / stride'  =>  d_max' = bins*stride' - 2 d_ext
    const int d_max = bins * stride - 2 * grid.d_ext;
    if (d_max <= 0) throw std::invalid_argument("refined_grid: degenerate refined range");
    return DisparityGrid(grid.d_ext, d_max, stride);
}

CostVolume upsample_trilinear(const CostVolume& v, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample_trilinear: factor must be >= 1");
    if (factor == 1) return v;
    const DisparityGrid fine = refined_grid(v.grid, factor);
    CostVolume out = resample_axis(v, knot_taps(v.grid.bins(), factor), 0, fine.bins());
    out.grid = fine;
    out = resample_axis(out, corner_aligned_taps(out.height, factor), 1, out.height * factor);
    out = resample_axis(out, corner_aligned_taps(out.width, factor), 2, out.width * factor);
    out.spatial_scale = v.spatial_scale / factor;
    return out;
}

namespace {

/// Exact coordinate minimization for least absolute deviations: the optimal
/// single knot value is a weighted median of the per-sample breakpoints.
double weighted_median(std::vector<std::pair<double, double>>& cand_weight) {
    std::sort(cand_weight.begin(), cand_weight.end());
    double total = 0.0;
    for (const auto& cw : cand_weight) total += cw.second;
    double acc = 0.0;
    for (const auto& cw : cand_weight) {
        acc += cw.second;
        if (acc >= 0.5 * total - 1e-15) return cw.first;
    }
    return cand_weight.back().first;
}

}  // namespace

double piecewise_linear_fit_gap(const TargetDistribution& target, int factor) {
    if (factor < 1) throw std::invalid_argument("piecewise_linear_fit_gap: factor must be >= 1");
    const int n = static_cast<int>(target.probs.size());
    if (n < 2) throw std::invalid_argument("piecewise_linear_fit_gap: target too short");
    if (factor == 1) return 0.0;
    if ((n - 1) % factor != 0)
        throw std::invalid_argument(
            "piecewise_linear_fit_gap: target length must be (knots-1)*factor + 1");
    const int m = (n - 1) / factor + 1;
    const std::vector<LinearTap> taps = knot_taps(m, factor);
    const std::vector<double>& q = target.probs;

    const auto objective = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            const LinearTap& t = taps[static_cast<size_t>(j)];
            const double fit = t.w_lo * v[static_cast<size_t>(t.lo)] +
                               (1.0 - t.w_lo) * v[static_cast<size_t>(t.lo + 1)];
            s += std::abs(q[static_cast<size_t>(j)] - fit);
        }
        return s;
    };

    // init: knot values taken from the target itself (feasible, close)
    std::vector<double> v(static_cast<size_t>(m));
    for (int k = 0; k < m; ++k) v[static_cast<size_t>(k)] = q[static_cast<size_t>(k * factor)];

    double best = objective(v);
    for (int pass = 0; pass < 400; ++pass) {
        bool moved = false;
        for (int k = 0; k < m; ++k) {
            std::vector<std::pair<double, double>> cand;
            for (int j = 0; j < n; ++j) {
                const LinearTap& t = taps[static_cast<size_t>(j)];
                double w = 0.0;
                if (t.lo == k) w = t.w_lo;
                else if (t.lo + 1 == k) w = 1.0 - t.w_lo;
                if (w <= 0.0) continue;
                const double other = (t.lo == k)
                    ? (1.0 - t.w_lo) * v[static_cast<size_t>(t.lo + 1)]
                    : t.w_lo * v[static_cast<size_t>(t.lo)];
                cand.emplace_back((q[static_cast<size_t>(j)] - other) / w, w);
            }
            const double old = v[static_cast<size_t>(k)];
            v[static_cast<size_t>(k)] = weighted_median(cand);
            if (std::abs(v[static_cast<size_t>(k)] - old) > 1e-15) moved = true;
        }
        const double cur = objective(v);
        if (cur < best - 1e-15) best = cur;
        if (!moved) break;
    }
    return best / n;
}

}  // namespace sgstereo
