#include "sgstereo/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "sgstereo/rng.hpp"

namespace sgstereo {

StereoSample generate_stereo_sample(const SceneParams& params, std::uint64_t seed) {
    const int H = params.height, W = params.width;
    if (params.d_max < 8) throw std::invalid_argument("generate_stereo_sample: d_max must be >= 8");
    if (H < 16 || W < 16 || H % 4 != 0 || W % 4 != 0)
        throw std::invalid_argument("generate_stereo_sample: H, W must be multiples of 4, >= 16");

    Rng rng(seed);
    StereoSample s;
    s.height = H;
    s.width = W;
    s.right.resize(static_cast<size_t>(H) * W);
    s.left.resize(static_cast<size_t>(H) * W);
    s.gt.height = H;
    s.gt.width = W;
    s.gt.values.assign(static_cast<size_t>(H) * W, 0.0);
    s.gt.valid.assign(static_cast<size_t>(H) * W, 1);

    for (double& v : s.right) v = rng.uniform();

    // Horizontally periodic band induces ambiguous matching.
    if (params.kind != SceneKind::Endpoint) {
        const int band_lo = params.kind == SceneKind::Ambiguous ? H / 4 : H / 3;
        const int band_hi = params.kind == SceneKind::Ambiguous ? 3 * H / 4 : H / 2;
        const int period = std::max(2, params.texture_period);
        for (int y = band_lo; y < band_hi; ++y) {
            std::vector<double> row(static_cast<size_t>(period));
            for (double& v : row) v = rng.uniform();
            for (int x = 0; x < W; ++x)
                s.right[static_cast<size_t>(y) * W + x] = row[static_cast<size_t>(x % period)];
        }
    }

    // Disparity field: base plane, one vertical strip, one slanted band.
    double levels[3];
    if (params.kind == SceneKind::Endpoint) {
        levels[0] = rng.uniform(0.0, 1.5);
        levels[1] = rng.uniform(0.0, 2.5);
        levels[2] = rng.uniform(4.0, 8.0);
    } else {
        levels[0] = rng.uniform(2.0, 8.0);
        levels[1] = rng.uniform(6.0, 14.0);
        levels[2] = rng.uniform(10.0, 15.0);
    }
    int x0 = 4 + static_cast<int>(rng.index(static_cast<std::uint64_t>(W - 8)));
    int x1 = 4 + static_cast<int>(rng.index(static_cast<std::uint64_t>(W - 8)));
    if (x0 > x1) std::swap(x0, x1);
    if (x1 - x0 < 4) x1 = std::min(W - 1, x0 + 6);
    const int y0 = 4 + static_cast<int>(rng.index(static_cast<std::uint64_t>(H - 12)));

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double d = levels[0];
            if (x >= x0 && x < x1) d = levels[1];
            if (y >= y0 && y < y0 + 6)
                d = std::clamp(levels[2] - 5.0 * x / W, 0.0, params.d_max - 1.0);
            // quarter-pixel quantized ground truth
            s.gt.at(y, x) = std::round(d * 4.0) / 4.0;
        }

    // left(x) = right(x - d) with linear interpolation; out-of-frame pixels
    // get fresh texture and are invalidated.
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double t = x - s.gt.at(y, x);
            const int lo = static_cast<int>(std::floor(t));
            if (t < 0.0 || lo + 1 > W - 1) {
                s.left[static_cast<size_t>(y) * W + x] = rng.uniform();
                s.gt.valid[static_cast<size_t>(y) * W + x] = 0;
                continue;
            }
            const double f = t - lo;
            const double a = s.right[static_cast<size_t>(y) * W + lo];
            const double b = s.right[static_cast<size_t>(y) * W + std::min(lo + 1, W - 1)];
            s.left[static_cast<size_t>(y) * W + x] = (1.0 - f) * a + f * b;
        }
        // z-buffer: when several pixels land on the same right column, only
        // the nearest (largest disparity) stays visible.
        std::unordered_map<int, int> owner;
        for (int x = 0; x < W; ++x) {
            if (!s.gt.is_valid(y, x)) continue;
            const int key = static_cast<int>(std::lround(x - s.gt.at(y, x)));
            auto it = owner.find(key);
            if (it == owner.end()) {
                owner.emplace(key, x);
            } else if (s.gt.at(y, it->second) >= s.gt.at(y, x)) {
                s.gt.valid[static_cast<size_t>(y) * W + x] = 0;
            } else {
                s.gt.valid[static_cast<size_t>(y) * W + it->second] = 0;
                it->second = x;
            }
        }
    }
    return s;
}

namespace {

std::vector<double> box_downsample4(const std::vector<double>& img, int H, int W) {
    const int h = H / 4, w = W / 4;
    std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int dy = 0; dy < 4; ++dy)
                for (int dx = 0; dx < 4; ++dx)
                    s += img[static_cast<size_t>(4 * y + dy) * W + 4 * x + dx];
            out[static_cast<size_t>(y) * w + x] = s / 16.0;
        }
    return out;
}

/// 5x5 zero-mean patches scaled to unit norm (times sqrt(C)), so that
/// correlation fusion's channel mean equals the normalized correlation.
FeatureMap patch_features(const std::vector<double>& img, int h, int w, int scale) {
    constexpr int kR = 2;
    constexpr int kC = 25;
    FeatureMap f;
    f.channels = kC;
    f.height = h;
    f.width = w;
    f.scale = scale;
    f.data.assign(static_cast<size_t>(kC) * h * w, 0.0);
    std::vector<double> patch(kC);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int k = 0;
            double mean = 0.0;
            for (int dy = -kR; dy <= kR; ++dy)
                for (int dx = -kR; dx <= kR; ++dx, ++k) {
                    const int sy = y + dy, sx = x + dx;
                    patch[static_cast<size_t>(k)] =
                        (sy >= 0 && sy < h && sx >= 0 && sx < w)
                            ? img[static_cast<size_t>(sy) * w + sx]
                            : 0.0;
                    mean += patch[static_cast<size_t>(k)];
                }
            mean /= kC;
            double norm2 = 0.0;
            for (double& v : patch) {
                v -= mean;
                norm2 += v * v;
            }
            const double norm = std::sqrt(norm2);
            const double s = norm > 1e-12 ? std::sqrt(static_cast<double>(kC)) / norm : 0.0;
            for (int c = 0; c < kC; ++c)
                f.at(c, y, x) = patch[static_cast<size_t>(c)] * s;
        }
    return f;
}

}  // namespace

CostVolume compute_matching_cost(const StereoSample& sample, const DisparityGrid& grid) {
    const int H = sample.height, W = sample.width;
    if (H % 4 != 0 || W % 4 != 0)
        throw std::invalid_argument("compute_matching_cost: dimensions must be multiples of 4");
    const FeatureMap fl = patch_features(box_downsample4(sample.left, H, W), H / 4, W / 4, 4);
    const FeatureMap fr = patch_features(box_downsample4(sample.right, H, W), H / 4, W / 4, 4);
    return build_cost_volume(fl, fr, grid, Fusion::Correlation);
}

}  // namespace sgstereo
