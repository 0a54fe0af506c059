#pragma once

#include <cstddef>

#include <nlohmann/json.hpp>

#include "stf/points.hpp"

namespace stf {

/// Two-sample energy distance 2 E|X - Y| - E|X - X'| - E|Y - Y'| with the
/// V-statistic (all pairs, including i = j) for the within-sample terms.
/// Zero for identical sets and never negative up to rounding.
double energy_distance(const Points& a, const Points& b);

/// Mean of |x - y| over all pairs of rows.
double mean_pair_distance(const Points& a, const Points& b);

struct MomentDiagnostics {
  Vec mean_a;
  Vec mean_b;
  double mean_gap = 0.0;        // |mean_a - mean_b|
  double covariance_gap = 0.0;  // Frobenius |cov_a - cov_b| / |cov_b|
};

Vec sample_mean(const Points& x);

/// Unbiased sample covariance, row-major d x d.
Vec sample_covariance(const Points& x);

/// |cov(x) - I|_F / |I|_F.
double covariance_identity_error(const Points& x);

MomentDiagnostics moment_diagnostics(const Points& a, const Points& b);

nlohmann::json to_json(const MomentDiagnostics& m);

}  // namespace stf
