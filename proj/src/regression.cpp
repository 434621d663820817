#include "sgstereo/regression.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sgstereo/distributions.hpp"

namespace sgstereo {

std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) throw std::invalid_argument("softmax: empty input");
    for (double v : z)
        if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite entry");
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

double soft_argmax(std::span<const double> z, const DisparityGrid& grid) {
    return distribution_expectation(softmax(z), grid);
}

std::vector<double> soft_argmax_gradient(std::span<const double> z, const DisparityGrid& grid) {
    if (static_cast<int>(z.size()) != grid.bins())
        throw std::invalid_argument("soft_argmax_gradient: length does not match grid");
    const std::vector<double> p = softmax(z);
    double d_bin = 0.0;
    for (size_t i = 0; i < p.size(); ++i) d_bin += p[i] * static_cast<double>(i);
    std::vector<double> g(p.size());
    for (size_t i = 0; i < p.size(); ++i)
        g[i] = p[i] * (static_cast<double>(i) - d_bin) * grid.stride;
    return g;
}

std::vector<GradientProfileEntry> gradient_bias_profile(std::span<const double> z,
                                                        const DisparityGrid& grid) {
    const std::vector<double> p = softmax(z);
    double d_bin = 0.0;
    for (size_t i = 0; i < p.size(); ++i) d_bin += p[i] * static_cast<double>(i);
    const std::vector<double> g = soft_argmax_gradient(z, grid);

    std::vector<GradientProfileEntry> prof(g.size());
    for (size_t i = 0; i < g.size(); ++i)
        prof[i] = {std::abs(static_cast<double>(i) - d_bin), std::abs(g[i])};
    std::stable_sort(prof.begin(), prof.end(),
                     [](const auto& a, const auto& b) { return a.distance < b.distance; });
    return prof;
}

double topk_soft_argmax(std::span<const double> z, int k, const DisparityGrid& grid) {
    const int n = grid.bins();
    if (static_cast<int>(z.size()) != n)
        throw std::invalid_argument("topk_soft_argmax: length does not match grid");
    if (k < 1 || k > n || (k % 2 == 0 && k != n))
        throw std::invalid_argument("topk_soft_argmax: k must be odd and in [1, bins]");

    const std::vector<double> p = softmax(z);
    int lo = 0, hi = n - 1;
    if (k < n) {
        int center = 0;
        for (int i = 1; i < n; ++i)
            if (p[static_cast<size_t>(i)] > p[static_cast<size_t>(center)]) center = i;
        const int half = (k - 1) / 2;
        lo = std::max(0, center - half);
        hi = std::min(n - 1, center + half);
    }
    double mass = 0.0, e = 0.0;
    for (int i = lo; i <= hi; ++i) {
        mass += p[static_cast<size_t>(i)];
        e += p[static_cast<size_t>(i)] * grid.bin_value(i);
    }
    return e / mass;
}

}  // namespace sgstereo
