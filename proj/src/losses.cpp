#include "sgstereo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sgstereo/rng.hpp"

namespace sgstereo {

namespace {
constexpr double kLogFloor = 1e-12;
constexpr double kNormFloor = 1e-12;

void check_same_size(std::span<const double> p, std::span<const double> q, const char* what) {
    if (p.size() != q.size() || p.empty())
        throw std::invalid_argument(std::string(what) + ": length mismatch");
}
}  // namespace

double smooth_l1(double d, double dhat) {
    if (!std::isfinite(d) || !std::isfinite(dhat))
        throw std::invalid_argument("smooth_l1: non-finite input");
    const double e = std::abs(d - dhat);
    return e < 1.0 ? 0.5 * e * e : e - 0.5;
}

double cross_entropy(std::span<const double> p, std::span<const double> q) {
    check_same_size(p, q, "cross_entropy");
    double h = 0.0;
    for (size_t i = 0; i < p.size(); ++i)
        h -= q[i] * std::log(std::max(p[i], kLogFloor));
    return h;
}

double l1_vector(std::span<const double> p, std::span<const double> q) {
    check_same_size(p, q, "l1_vector");
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return s / static_cast<double>(p.size());
}

double neg_cosine(std::span<const double> p, std::span<const double> q) {
    check_same_size(p, q, "neg_cosine");
    double dot = 0.0, np = 0.0, nq = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        dot += p[i] * q[i];
        np += p[i] * p[i];
        nq += q[i] * q[i];
    }
    np = std::sqrt(np);
    nq = std::sqrt(nq);
    if (np <= kNormFloor || nq <= kNormFloor)
        throw std::invalid_argument("neg_cosine: zero-norm input");
    return -dot / (np * nq);
}

LossReport combined_loss(std::span<const double> p, std::span<const double> q, double lambda) {
    LossReport r;
    r.lambda = lambda;
    const double l1 = l1_vector(p, q);
    const double nc = neg_cosine(p, q);
    r.per_term["l1"] = l1;
    r.per_term["cos"] = nc;
    r.value = l1 + lambda * nc;
    return r;
}

namespace {

/// Moves `mass` from the peak bin to peak+offset, clamping so the vector
/// stays a distribution.
std::vector<double> transfer_mass(const std::vector<double>& q, int peak, int offset,
                                  double mass) {
    std::vector<double> p = q;
    const int n = static_cast<int>(q.size());
    const int dst = std::clamp(peak + offset, 0, n - 1);
    const double m = std::min(mass, p[static_cast<size_t>(peak)]);
    p[static_cast<size_t>(peak)] -= m;
    p[static_cast<size_t>(dst)] += m;
    return p;
}

}  // namespace

std::vector<LandscapeRow> loss_landscape_scan(const TargetDistribution& target,
                                              const DisparityGrid& grid,
                                              const LandscapeSpec& spec) {
    const std::vector<double>& q = target.probs;
    if (static_cast<int>(q.size()) != grid.bins())
        throw std::invalid_argument("loss_landscape_scan: target does not match grid");
    const int n = grid.bins();
    const int peak =
        static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
    const double eq = distribution_expectation(q, grid);

    const auto emit = [&](const std::vector<double>& p) {
        LandscapeRow row;
        row.l1 = l1_vector(p, q);
        row.combined = combined_loss(p, q, spec.lambda).value;
        row.epe = std::abs(distribution_expectation(p, grid) - eq);
        return row;
    };

    std::vector<LandscapeRow> rows;
    rows.reserve(static_cast<size_t>(3 + spec.random_rows));
    rows.push_back(emit(q));
    rows.push_back(emit(transfer_mass(q, peak, spec.pair_near, spec.pair_mass)));
    rows.push_back(emit(transfer_mass(q, peak, spec.pair_far, spec.pair_mass)));

    Rng rng(spec.seed);
    for (int r = 0; r < spec.random_rows; ++r) {
        if (r % 2 == 0) {
            // peak shift: resample the same-shaped target at a moved center
            const double shift = rng.uniform(-3.0, 3.0);
            rows.push_back(emit(
                sample_gaussian_target(target.mu + shift, target.sigma, grid).probs));
        } else {
            // random mass transfer away from the peak
            const int offset = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(
                                   std::max(1, n / 3))));
            const int sign = rng.uniform() < 0.5 ? -1 : 1;
            const double mass = rng.uniform(0.01, 0.4);
            rows.push_back(emit(transfer_mass(q, peak, sign * offset, mass)));
        }
    }
    return rows;
}

}  // namespace sgstereo
