#include <doctest.h>

#include <cmath>

#include "sgstereo/costvolume.hpp"
#include "sgstereo/rng.hpp"

using namespace sgstereo;

namespace {

FeatureMap make_feature_row(const std::vector<double>& row, int scale = 1) {
    FeatureMap f;
    f.channels = 1;
    f.height = 1;
    f.width = static_cast<int>(row.size());
    f.scale = scale;
    f.data = row;
    return f;
}

FeatureMap random_features(int channels, int h, int w, std::uint64_t seed) {
    FeatureMap f;
    f.channels = channels;
    f.height = h;
    f.width = w;
    f.scale = 1;
    f.data.resize(static_cast<size_t>(channels) * h * w);
    Rng rng(seed);
    for (double& v : f.data) v = rng.uniform(-1.0, 1.0);
    return f;
}

}  // namespace

TEST_CASE("cost volume by shifted correlation") {
    SUBCASE("constant pair gives unit correlation on in-frame cells") {
        FeatureMap f = random_features(3, 2, 5, 1);
        for (double& v : f.data) v = 1.0;
        const DisparityGrid grid(0, 4, 1);
        const CostVolume v = build_cost_volume(f, f, grid, Fusion::Correlation);
        for (int d = 0; d < 4; ++d)
            for (int x = 0; x < 5; ++x) {
                if (v.cell_valid(d, 0, x))
                    CHECK(v.at(0, d, 0, x) == doctest::Approx(1.0).epsilon(1e-14));
                else
                    CHECK(v.at(0, d, 0, x) == 0.0);
            }
    }

    SUBCASE("hand-computed shifted row") {
        const FeatureMap f = make_feature_row({1, 2, 3, 4});
        const DisparityGrid grid(0, 2, 1);  // bins at d_px 0 and 1
        const CostVolume v = build_cost_volume(f, f, grid, Fusion::Correlation);
        // d_px = 1 plane: [0 (out of frame), 2*1, 3*2, 4*3]
        CHECK(v.at(0, 1, 0, 0) == 0.0);
        CHECK(!v.cell_valid(1, 0, 0));
        CHECK(v.at(0, 1, 0, 1) == doctest::Approx(2.0));
        CHECK(v.at(0, 1, 0, 2) == doctest::Approx(6.0));
        CHECK(v.at(0, 1, 0, 3) == doctest::Approx(12.0));
    }

    SUBCASE("zero shift is maximal for a self-matching pair") {
        const FeatureMap f = random_features(8, 3, 7, 2);
        const DisparityGrid grid(2, 2, 1);  // d_px in {-2,-1,0,1,2,3}
        const CostVolume v = build_cost_volume(f, f, grid, Fusion::Correlation);
        const int zero_bin = 2;  // -d_ext + 2 = 0
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 7; ++x)
                for (int d = 0; d < grid.bins(); ++d) {
                    if (d == zero_bin || !v.cell_valid(d, y, x)) continue;
                    CHECK(v.at(0, zero_bin, y, x) >= v.at(0, d, y, x) - 1e-12);
                }
    }

    SUBCASE("concat fusion doubles the channels") {
        const FeatureMap f = random_features(4, 2, 5, 3);
        const DisparityGrid grid(0, 3, 1);
        const CostVolume v = build_cost_volume(f, f, grid, Fusion::Concat);
        CHECK(v.channels == 8);
        CHECK(v.at(0, 0, 1, 2) == f.at(0, 1, 2));
        CHECK(v.at(4, 1, 1, 2) == f.at(0, 1, 1));  // right features shifted by 1
    }

    SUBCASE("shape mismatch rejected") {
        const FeatureMap a = random_features(2, 2, 4, 4);
        const FeatureMap b = random_features(2, 2, 5, 4);
        CHECK_THROWS_AS(build_cost_volume(a, b, DisparityGrid(0, 2, 1), Fusion::Correlation),
                        std::invalid_argument);
    }
}

TEST_CASE("correlation symmetry under view swap and disparity negation") {
    const FeatureMap fl = random_features(4, 2, 6, 7);
    const FeatureMap fr = random_features(4, 2, 6, 8);
    const DisparityGrid grid(3, 2, 1);  // d_px in {-3..4}
    const CostVolume ab = build_cost_volume(fl, fr, grid, Fusion::Correlation);
    const CostVolume ba = build_cost_volume(fr, fl, grid, Fusion::Correlation);
    // ab(d_px, x) = <fl(x), fr(x - d_px)> = ba(-d_px, x - d_px)
    for (int d = 0; d < grid.bins(); ++d) {
        const int d_px = -grid.d_ext + d;
        const int neg_bin = -d_px + grid.d_ext;
        if (neg_bin < 0 || neg_bin >= grid.bins()) continue;
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 6; ++x) {
                const int xs = x - d_px;
                if (xs < 0 || xs >= 6) continue;
                if (!ab.cell_valid(d, y, x) || !ba.cell_valid(neg_bin, y, xs)) continue;
                CHECK(ab.at(0, d, y, x) ==
                      doctest::Approx(ba.at(0, neg_bin, y, xs)).epsilon(1e-12));
            }
    }
}

namespace {

CostVolume volume_from_rows(const std::vector<double>& row, int bins) {
    // one channel, `bins` disparity planes each equal to `row`
    CostVolume v;
    v.channels = 1;
    v.grid = DisparityGrid(0, bins, 1);
    v.height = 1;
    v.width = static_cast<int>(row.size());
    v.spatial_scale = 4;
    for (int d = 0; d < bins; ++d)
        for (double x : row) v.data.push_back(x + d);  // distinct per plane
    v.valid.assign(static_cast<size_t>(bins) * row.size(), 1);
    return v;
}

}  // namespace

TEST_CASE("bilinear spatial upsampling") {
    SUBCASE("corner-aligned 1-D row") {
        const CostVolume v = volume_from_rows({0.0, 1.0}, 2);
        const CostVolume u = upsample_bilinear_spatial(v, 2);
        CHECK(u.width == 4);
        CHECK(u.height == 2);
        CHECK(u.grid.bins() == 2);  // disparity untouched
        CHECK(u.at(0, 0, 0, 0) == doctest::Approx(0.0));
        CHECK(u.at(0, 0, 0, 1) == doctest::Approx(1.0 / 3));
        CHECK(u.at(0, 0, 0, 2) == doctest::Approx(2.0 / 3));
        CHECK(u.at(0, 0, 0, 3) == doctest::Approx(1.0));
    }
    SUBCASE("constant volume stays constant; bins unchanged") {
        CostVolume v = volume_from_rows({2.5, 2.5, 2.5}, 12);
        for (double& x : v.data) x = 2.5;
        const CostVolume u = upsample_bilinear_spatial(v, 4);
        CHECK(u.grid.bins() == 12);
        for (double x : u.data) CHECK(x == doctest::Approx(2.5).epsilon(1e-14));
    }
    SUBCASE("corners preserved exactly") {
        Rng rng(9);
        CostVolume v;
        v.channels = 1;
        v.grid = DisparityGrid(0, 2, 1);
        v.height = 3;
        v.width = 4;
        v.spatial_scale = 4;
        v.data.resize(2 * 3 * 4);
        for (double& x : v.data) x = rng.uniform(-1, 1);
        v.valid.assign(2 * 3 * 4, 1);
        const CostVolume u = upsample_bilinear_spatial(v, 4);
        for (int d = 0; d < 2; ++d) {
            CHECK(u.at(0, d, 0, 0) == v.at(0, d, 0, 0));
            CHECK(u.at(0, d, 0, u.width - 1) == v.at(0, d, 0, 3));
            CHECK(u.at(0, d, u.height - 1, 0) == v.at(0, d, 2, 0));
            CHECK(u.at(0, d, u.height - 1, u.width - 1) == v.at(0, d, 2, 3));
        }
    }
}

TEST_CASE("trilinear upsampling refines the disparity axis") {
    SUBCASE("two knots interpolate an exact ramp") {
        CostVolume v;
        v.channels = 1;
        v.grid = DisparityGrid(0, 8, 4);  // 2 coarse bins
        v.height = 1;
        v.width = 1;
        v.spatial_scale = 4;
        v.data = {0.0, 4.0};
        v.valid = {1, 1};
        const CostVolume u = upsample_trilinear(v, 4);
        CHECK(u.grid.bins() == 5);
        CHECK(u.grid.stride == 1);
        for (int d = 0; d < 5; ++d)
            CHECK(u.at(0, d, 0, 0) == doctest::Approx(static_cast<double>(d)).epsilon(1e-14));
    }
    SUBCASE("interior collinearity: zero second difference between knots") {
        Rng rng(12);
        CostVolume v;
        v.channels = 1;
        v.grid = DisparityGrid(16, 48, 4);  // 20 coarse bins
        v.height = 2;
        v.width = 2;
        v.spatial_scale = 4;
        v.data.resize(20 * 4);
        for (double& x : v.data) x = rng.uniform(-2, 2);
        v.valid.assign(20 * 4, 1);
        const CostVolume u = upsample_trilinear(v, 4);
        CHECK(u.grid.bins() == 77);
        for (int y = 0; y < u.height; y += 3)
            for (int x = 0; x < u.width; x += 3)
                for (int d = 0; d + 2 < u.grid.bins(); ++d) {
                    if (d / 4 != (d + 2) / 4) continue;  // spans a knot
                    const double second_diff = u.at(0, d, y, x) - 2.0 * u.at(0, d + 1, y, x) +
                                               u.at(0, d + 2, y, x);
                    CHECK(std::abs(second_diff) <= 1e-12);
                }
    }
    SUBCASE("constant stays constant") {
        CostVolume v;
        v.channels = 1;
        v.grid = DisparityGrid(0, 8, 4);
        v.height = 2;
        v.width = 2;
        v.spatial_scale = 4;
        v.data.assign(2 * 4, 3.25);
        v.valid.assign(2 * 4, 1);
        const CostVolume u = upsample_trilinear(v, 4);
        for (double x : u.data) CHECK(x == doctest::Approx(3.25).epsilon(1e-14));
    }
}

TEST_CASE("piecewise linear fit gap") {
    // Expected gaps from the exact LP reference (tests/oracle/fit_gap.py).
    const int factor = 4;
    const DisparityGrid grid13(0, 13, 1);

    SUBCASE("sharp gaussian far from representable") {
        const TargetDistribution q = sample_gaussian_target(6.0, 0.5, grid13);
        const double gap = piecewise_linear_fit_gap(q, factor);
        CHECK(gap == doctest::Approx(0.076875713).epsilon(1e-6));
        CHECK(gap > 0.05);
    }
    SUBCASE("wider gaussian is easier") {
        const TargetDistribution half = sample_gaussian_target(6.0, 0.5, grid13);
        const TargetDistribution two = sample_gaussian_target(6.0, 2.0, grid13);
        const double g_half = piecewise_linear_fit_gap(half, factor);
        const double g_two = piecewise_linear_fit_gap(two, factor);
        CHECK(g_two == doctest::Approx(0.025124848).epsilon(1e-6));
        CHECK(g_half > g_two);
    }
    SUBCASE("linear ramps are exactly representable") {
        TargetDistribution ramp;
        for (int i = 0; i < 13; ++i) ramp.probs.push_back(i / 12.0);
        CHECK(piecewise_linear_fit_gap(ramp, factor) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("factor 1 is the identity") {
        const TargetDistribution q = sample_gaussian_target(6.0, 0.5, grid13);
        CHECK(piecewise_linear_fit_gap(q, 1) == 0.0);
    }
    SUBCASE("off-knot peak on the larger instance") {
        const DisparityGrid grid49(0, 49, 1);
        const TargetDistribution q = sample_gaussian_target(22.0, 0.5, grid49);
        CHECK(piecewise_linear_fit_gap(q, factor) ==
              doctest::Approx(0.020397392).epsilon(1e-5));
    }
}

TEST_CASE("refined grid bookkeeping") {
    const DisparityGrid coarse(16, 48, 4);
    const DisparityGrid fine = refined_grid(coarse, 4);
    CHECK(fine.stride == 1);
    CHECK(fine.bins() == (coarse.bins() - 1) * 4 + 1);
    CHECK(fine.bin_value(0) == coarse.bin_value(0));
    CHECK(fine.bin_value(fine.bins() - 1) == coarse.bin_value(coarse.bins() - 1));
    CHECK_THROWS_AS(refined_grid(DisparityGrid(0, 48, 1), 4), std::invalid_argument);
}
