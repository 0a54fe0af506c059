#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stf/analytic.hpp"
#include "stf/datasets.hpp"
#include "stf/numerics.hpp"
#include "stf/schedule.hpp"

namespace stf {

/// Two-level Monte-Carlo estimate of the average trace-of-covariance of DSM
/// targets: outer draws x_t ~ p_t, inner draws x_0 ~ p(x_0 | x_t), unbiased
/// (inner - 1) covariance per outer draw. Standard error from the spread of
/// the outer values.
Estimate estimate_v_dsm(const Distribution& dist, const NoiseSchedule& schedule, double t, std::size_t outer,
                        std::size_t inner, Rng& rng);

/// Same for STF targets: each inner sample is a fresh reference batch of
/// size n whose first element is a posterior draw and the rest come from p_0.
Estimate estimate_v_stf(const Distribution& dist, const NoiseSchedule& schedule, double t, std::size_t n,
                        std::size_t outer, std::size_t inner, Rng& rng);

/// Unbiased trace of the sample covariance of the rows.
double trace_covariance(const Points& samples);

/// Divergence generator: (1/y - 1)^2 for y < 1.5, 8y/27 - 1/3 otherwise.
double f_div_scalar(double y);

enum class DivergenceOrder {
  P0_vs_Posterior,  // D_f(p_0 || p(x_0 | x_t))
  Posterior_vs_P0,  // D_f(p(x_0 | x_t) || p_0)
};

/// log D_f between the categorical prior and posterior weights. Computed in
/// log space: the Posterior_vs_P0 order grows like the squared inverse of a
/// vanishing responsibility and overflows doubles near t = 0.
double log_f_divergence(std::span<const double> log_prior, std::span<const double> log_posterior,
                        DivergenceOrder order);

/// E_{x_t ~ p_t} of the f-divergence over mixture components / points. The
/// mean is accumulated as a log-mean-exp, so `value` is +inf only when the
/// true average exceeds the double range; `log_value` is always finite.
struct DivergenceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double log_value = 0.0;
  std::size_t samples = 0;
};

DivergenceEstimate estimate_divergence(const Distribution& dist, const NoiseSchedule& schedule, double t,
                                       std::size_t outer, Rng& rng, DivergenceOrder order);

struct BiasPoint {
  std::size_t n = 0;
  double bias_norm = 0.0;
  double noise_floor = 0.0;  // norm of the per-coordinate standard errors
};

std::vector<BiasPoint> estimate_bias_curve(const Distribution& dist, const NoiseSchedule& schedule,
                                           std::span<const double> xt, double t, const std::vector<std::size_t>& n_grid,
                                           std::size_t trials, Rng& rng,
                                           ReferenceMode mode = ReferenceMode::IID);

struct ScanBudgets {
  std::size_t outer = 512;
  std::size_t inner = 64;
  std::size_t divergence_outer = 512;
};

struct VarianceReport {
  Vec t_grid;
  std::vector<Estimate> v_dsm;
  std::map<std::size_t, std::vector<Estimate>> v_stf;
  std::vector<DivergenceEstimate> d_p0_post;
  std::vector<DivergenceEstimate> d_post_p0;
  std::string fingerprint;

  /// Index of the largest v_dsm entry.
  std::size_t v_dsm_peak() const;
};

/// Each (quantity, t index, n) cell uses its own keyed substream of the seed
/// drawn from rng, so cells can be recomputed independently.
VarianceReport phase_scan(const Distribution& dist, const NoiseSchedule& schedule, const Vec& t_grid,
                          const std::vector<std::size_t>& n_list, const ScanBudgets& budgets, Rng& rng);

/// values / max(values); zeros stay zero. Non-finite maxima map finite
/// entries to 0 and infinite ones to 1.
Vec normalized(const Vec& values);

/// Columns: t, v_dsm, v_dsm_se, v_stf_n{n}, v_stf_n{n}_se..., d_t_p0_post,
/// d_t_post_p0, then d_t_*_se, log_d_t_*, and the max-normalized curves.
void write_report_csv(const VarianceReport& report, const std::filesystem::path& path);

}  // namespace stf
