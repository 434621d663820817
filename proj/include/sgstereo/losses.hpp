#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sgstereo/distributions.hpp"
#include "sgstereo/grid.hpp"

namespace sgstereo {

/// 0.5 e^2 inside |e| < 1, |e| - 0.5 outside.
double smooth_l1(double d, double dhat);

/// -Σ q(x) log p(x), with p floored at 1e-12 before the log.
double cross_entropy(std::span<const double> p, std::span<const double> q);

/// Mean absolute difference (1/n) Σ |p_i - q_i|.
double l1_vector(std::span<const double> p, std::span<const double> q);

/// -<p,q> / (|p| |q|); in [-1, 0] for nonnegative vectors.
/// Throws if either norm is <= 1e-12.
double neg_cosine(std::span<const double> p, std::span<const double> q);

struct LossReport {
    double value = 0.0;
    std::map<std::string, double> per_term;
    double lambda = 0.0;
};

/// value = l1_vector(p, q) + lambda * neg_cosine(p, q); per_term carries
/// "l1" and "cos".
LossReport combined_loss(std::span<const double> p, std::span<const double> q, double lambda);

struct LandscapeRow {
    double l1 = 0.0;
    double combined = 0.0;
    double epe = 0.0;  ///< |expectation(p) - expectation(q)|, full-res units
};

struct LandscapeSpec {
    int random_rows = 64;       ///< seeded perturbations appended to the fixed family
    double lambda = 0.5;
    std::uint64_t seed = 0;
    double pair_mass = 0.15;    ///< mass moved for the deterministic equal-l1 pair
    int pair_near = 1;          ///< destination offsets of the pair
    int pair_far = 5;
};

/// Samples the loss landscape around a target distribution with a fixed,
/// reproducible family of perturbed unit-mass vectors:
///   row 0            p = q
///   rows 1..2        the equal-l1 pair: `pair_mass` moved from the peak to
///                    peak+pair_near and peak+pair_far (same l1, different
///                    expectation)
///   remaining rows   seeded peak shifts and random mass transfers
/// Output is bit-reproducible for a given spec.
std::vector<LandscapeRow> loss_landscape_scan(const TargetDistribution& target,
                                              const DisparityGrid& grid,
                                              const LandscapeSpec& spec);

}  // namespace sgstereo
