#include "sgstereo/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace sgstereo {

namespace {

void check_finite_params(double mu, double scale, const char* what) {
    if (!std::isfinite(mu))
        throw std::invalid_argument(std::string(what) + ": mu must be finite");
    if (!std::isfinite(scale) || scale <= 0.0)
        throw std::invalid_argument(std::string(what) + ": scale must be finite and > 0");
}

/// Normalizes exponent values in place via max-subtraction. Keeps the result
/// well defined even when mu lies far outside the grid and every raw weight
/// underflows.
std::vector<double> normalized_from_exponents(std::vector<double> ex) {
    const double m = *std::max_element(ex.begin(), ex.end());
    double sum = 0.0;
    for (double& e : ex) {
        e = std::exp(e - m);
        sum += e;
    }
    for (double& e : ex) e /= sum;
    return ex;
}

}  // namespace

TargetDistribution sample_gaussian_target(double mu, double sigma, const DisparityGrid& grid) {
    grid.validate();
    check_finite_params(mu, sigma, "sample_gaussian_target");
    const int n = grid.bins();
    std::vector<double> ex(static_cast<size_t>(n));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int i = 0; i < n; ++i) {
        const double d = i - mu;
        ex[static_cast<size_t>(i)] = -d * d * inv;
    }
    return TargetDistribution{normalized_from_exponents(std::move(ex)), mu, sigma};
}

TargetDistribution sample_laplacian_target(double mu, double b, const DisparityGrid& grid) {
    grid.validate();
    check_finite_params(mu, b, "sample_laplacian_target");
    const int n = grid.bins();
    std::vector<double> ex(static_cast<size_t>(n));
    const double inv = 1.0 / b;
    for (int i = 0; i < n; ++i) ex[static_cast<size_t>(i)] = -std::abs(i - mu) * inv;
    return TargetDistribution{normalized_from_exponents(std::move(ex)), mu, b};
}

double distribution_expectation(std::span<const double> dist, const DisparityGrid& grid) {
    if (static_cast<int>(dist.size()) != grid.bins())
        throw std::invalid_argument("distribution_expectation: length does not match grid");
    double sum = 0.0;
    for (double p : dist) sum += p;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("distribution_expectation: input does not sum to 1");
    double e = 0.0;
    for (size_t i = 0; i < dist.size(); ++i) e += dist[i] * grid.bin_value(static_cast<int>(i));
    return e;
}

TruncationReport truncation_analysis(double mu, double sigma, int lo, int hi) {
    check_finite_params(mu, sigma, "truncation_analysis");
    if (lo >= hi) throw std::invalid_argument("truncation_analysis: requires lo < hi");

    const double inv = 1.0 / (2.0 * sigma * sigma);
    const auto weight = [&](double x) {
        const double d = x - mu;
        return std::exp(-d * d * inv);
    };

    // Numerically exhaustive reference support.
    const double reach = std::abs(mu) + 12.0 * sigma + 12.0;
    const int zlo = static_cast<int>(std::ceil(mu - reach));
    const int zhi = static_cast<int>(std::floor(mu + reach));
    double z_inf = 0.0;
    for (int x = zlo; x <= zhi; ++x) z_inf += weight(x);

    double mass = 0.0;
    double moment = 0.0;  // Σ w(x) * (x - mu), centered to limit cancellation
    for (int x = lo; x <= hi; ++x) {
        const double w = weight(x);
        mass += w;
        moment += w * (x - mu);
    }

    TruncationReport r;
    r.mass_deficit = 1.0 - mass / z_inf;
    r.expectation_shift = moment / mass;
    return r;
}

ProbabilityField build_target_field(std::span<const double> gt,
                                    std::span<const std::uint8_t> valid, int height, int width,
                                    double sigma, const DisparityGrid& grid) {
    const size_t npx = static_cast<size_t>(height) * width;
    if (gt.size() != npx || valid.size() != npx)
        throw std::invalid_argument("build_target_field: gt/valid size mismatch");

    ProbabilityField field;
    field.bins = grid.bins();
    field.height = height;
    field.width = width;
    field.probs.assign(static_cast<size_t>(field.bins) * npx, 0.0);
    field.valid.assign(npx, 0);

    for (size_t px = 0; px < npx; ++px) {
        if (!valid[px]) continue;
        const double d = gt[px];
        if (!std::isfinite(d))
            throw std::invalid_argument("build_target_field: non-finite gt at valid pixel");
        if (d > static_cast<double>(grid.d_max) + grid.d_ext) {
            ++field.out_of_range;
            continue;
        }
        const TargetDistribution t = sample_gaussian_target(grid.to_bin(d), sigma, grid);
        field.valid[px] = 1;
        for (int b = 0; b < field.bins; ++b)
            field.probs[static_cast<size_t>(b) * npx + px] = t.probs[static_cast<size_t>(b)];
    }
    return field;
}

}  // namespace sgstereo
