#include "stf/variance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "stf/io.hpp"
#include "stf/parallel.hpp"
#include "stf/targets.hpp"

namespace stf {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_budgets(std::size_t outer, std::size_t inner, const char* what) {
  if (outer < 2 || inner < 2) {
    throw std::invalid_argument(std::string(what) + ": outer and inner counts must both be >= 2");
  }
}

Estimate accumulate(const Vec& values) {
  MomentAccumulator acc;
  for (double v : values) acc.add(v);
  return to_estimate(acc);
}

// log |e^u - 1| without overflow for large u.
double log_abs_expm1(double u) {
  if (u > 30.0) return u + std::log1p(-std::exp(-u));
  const double v = std::abs(std::expm1(u));
  return v > 0.0 ? std::log(v) : kNegInf;
}

// log of p * f(q / p) for log weights lp, lq.
double log_term(double lp, double lq) {
  if (lp == kNegInf) return kNegInf;
  const double log_y = lq - lp;
  if (log_y < std::log(1.5)) {
    // p (1/y - 1)^2 = p (p/q - 1)^2
    if (lq == kNegInf) return std::numeric_limits<double>::infinity();
    return lp + 2.0 * log_abs_expm1(lp - lq);
  }
  // p (8y/27 - 1/3) = 8q/27 - p/3
  return lq + std::log(8.0 / 27.0 - std::exp(lp - lq) / 3.0);
}

}  // namespace

double trace_covariance(const Points& samples) {
  const std::size_t m = samples.rows();
  const std::size_t d = samples.dim();
  if (m < 2) throw std::invalid_argument("trace_covariance: need at least two samples");
  Vec mean(d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = samples.row(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (double& v : mean) v /= static_cast<double>(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = samples.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = row[j] - mean[j];
      total += diff * diff;
    }
  }
  return total / static_cast<double>(m - 1);
}

Estimate estimate_v_dsm(const Distribution& dist, const NoiseSchedule& schedule, double t, std::size_t outer,
                        std::size_t inner, Rng& rng) {
  check_budgets(outer, inner, "estimate_v_dsm");
  const ComponentView comps = components(dist);
  const std::size_t d = comps.dim();
  const std::uint64_t base = rng.next_u64();
  Vec values(outer);
  parallel_for(outer, [&](std::size_t o) {
    Rng local = Rng::substream(base, {o});
    const Vec xt = sample_marginal(dist, schedule, t, local);
    Vec resp(comps.size());
    posterior_weights_into(comps, schedule, xt, t, resp);
    Points targets(inner, d);
    Vec x0(d);
    for (std::size_t k = 0; k < inner; ++k) {
      sample_posterior(comps, schedule, xt, t, resp, local, x0);
      const Vec target = kernel_score(schedule, x0, xt, t);
      std::copy(target.begin(), target.end(), targets.row(k).begin());
    }
    values[o] = trace_covariance(targets);
  });
  return accumulate(values);
}

Estimate estimate_v_stf(const Distribution& dist, const NoiseSchedule& schedule, double t, std::size_t n,
                        std::size_t outer, std::size_t inner, Rng& rng) {
  check_budgets(outer, inner, "estimate_v_stf");
  if (n == 0) throw std::invalid_argument("estimate_v_stf: n must be >= 1");
  const ComponentView comps = components(dist);
  const std::size_t d = comps.dim();
  const std::uint64_t base = rng.next_u64();
  Vec values(outer);
  parallel_for(outer, [&](std::size_t o) {
    Rng local = Rng::substream(base, {o});
    const Vec xt = sample_marginal(dist, schedule, t, local);
    Vec resp(comps.size());
    posterior_weights_into(comps, schedule, xt, t, resp);
    Points targets(inner, d);
    Points refs(n, d);
    Vec weights(n);
    for (std::size_t k = 0; k < inner; ++k) {
      sample_posterior(comps, schedule, xt, t, resp, local, refs.row(0));
      sample_data_into(dist, refs, 1, local);
      stf_target_into(schedule, xt, refs, t, weights, targets.row(k));
    }
    values[o] = trace_covariance(targets);
  });
  return accumulate(values);
}

double f_div_scalar(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("f_div_scalar: y must be positive");
  if (y < 1.5) {
    const double r = 1.0 / y - 1.0;
    return r * r;
  }
  return 8.0 * y / 27.0 - 1.0 / 3.0;
}

double log_f_divergence(std::span<const double> log_prior, std::span<const double> log_posterior,
                        DivergenceOrder order) {
  require_same_dim(log_prior.size(), log_posterior.size(), "log_f_divergence");
  Vec terms(log_prior.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    // D_f(P || Q) = sum_i Q_i f(P_i / Q_i)
    terms[i] = order == DivergenceOrder::P0_vs_Posterior ? log_term(log_posterior[i], log_prior[i])
                                                         : log_term(log_prior[i], log_posterior[i]);
  }
  return log_sum_exp(terms);
}

DivergenceEstimate estimate_divergence(const Distribution& dist, const NoiseSchedule& schedule, double t,
                                       std::size_t outer, Rng& rng, DivergenceOrder order) {
  if (outer < 2) throw std::invalid_argument("estimate_divergence: outer must be >= 2");
  const ComponentView comps = components(dist);
  const std::uint64_t base = rng.next_u64();
  Vec log_values(outer);
  parallel_for(outer, [&](std::size_t o) {
    Rng local = Rng::substream(base, {o});
    const Vec xt = sample_marginal(dist, schedule, t, local);
    Vec log_post(comps.size());
    log_posterior_weights_into(comps, schedule, xt, t, log_post);
    log_values[o] = log_f_divergence(comps.log_weights, log_post, order);
  });

  DivergenceEstimate est;
  est.samples = outer;
  const double m = max_of(log_values);
  if (m == kNegInf) return est;  // every divergence exactly zero
  if (m == std::numeric_limits<double>::infinity()) {
    est.value = est.std_error = est.log_value = m;
    return est;
  }
  MomentAccumulator scaled;
  for (double lv : log_values) scaled.add(std::exp(lv - m));
  est.log_value = m + std::log(scaled.mean);
  est.value = std::exp(est.log_value);
  est.std_error = est.value * scaled.std_error() / scaled.mean;
  return est;
}

std::vector<BiasPoint> estimate_bias_curve(const Distribution& dist, const NoiseSchedule& schedule,
                                           std::span<const double> xt, double t, const std::vector<std::size_t>& n_grid,
                                           std::size_t trials, Rng& rng, ReferenceMode mode) {
  const Vec truth = marginal_score(dist, schedule, xt, t);
  const std::uint64_t base = rng.next_u64();
  std::vector<BiasPoint> curve;
  curve.reserve(n_grid.size());
  for (std::size_t k = 0; k < n_grid.size(); ++k) {
    Rng local = Rng::substream(base, {k});
    const VectorEstimate est = brute_force_stf_minimizer(dist, schedule, xt, t, n_grid[k], trials, local, mode);
    double bias2 = 0.0;
    double se2 = 0.0;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double diff = est.mean[j] - truth[j];
      bias2 += diff * diff;
      se2 += est.std_error[j] * est.std_error[j];
    }
    curve.push_back({n_grid[k], std::sqrt(bias2), std::sqrt(se2)});
  }
  return curve;
}

std::size_t VarianceReport::v_dsm_peak() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v_dsm.size(); ++i) {
    if (v_dsm[i].value > v_dsm[best].value) best = i;
  }
  return best;
}

VarianceReport phase_scan(const Distribution& dist, const NoiseSchedule& schedule, const Vec& t_grid,
                          const std::vector<std::size_t>& n_list, const ScanBudgets& budgets, Rng& rng) {
  if (t_grid.empty()) throw std::invalid_argument("phase_scan: empty t grid");
  const std::uint64_t base = rng.next_u64();
  VarianceReport report;
  report.t_grid = t_grid;
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const double t = t_grid[k];
    Rng r_dsm = Rng::substream(base, {0, k});
    report.v_dsm.push_back(estimate_v_dsm(dist, schedule, t, budgets.outer, budgets.inner, r_dsm));
    for (std::size_t n : n_list) {
      Rng r_stf = Rng::substream(base, {1, k, n});
      report.v_stf[n].push_back(estimate_v_stf(dist, schedule, t, n, budgets.outer, budgets.inner, r_stf));
    }
    Rng r_a = Rng::substream(base, {2, k});
    report.d_p0_post.push_back(
        estimate_divergence(dist, schedule, t, budgets.divergence_outer, r_a, DivergenceOrder::P0_vs_Posterior));
    Rng r_b = Rng::substream(base, {3, k});
    report.d_post_p0.push_back(
        estimate_divergence(dist, schedule, t, budgets.divergence_outer, r_b, DivergenceOrder::Posterior_vs_P0));
  }
  return report;
}

Vec normalized(const Vec& values) {
  Vec out(values.size(), 0.0);
  if (values.empty()) return out;
  const double m = *std::max_element(values.begin(), values.end());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(m)) {
      out[i] = std::isfinite(values[i]) ? 0.0 : 1.0;
    } else if (m > 0.0) {
      out[i] = values[i] / m;
    }
  }
  return out;
}

void write_report_csv(const VarianceReport& report, const std::filesystem::path& path) {
  CsvWriter csv(path, report.fingerprint);
  std::vector<std::string> header{"t", "v_dsm", "v_dsm_se"};
  for (const auto& [n, _] : report.v_stf) {
    header.push_back("v_stf_n" + std::to_string(n));
    header.push_back("v_stf_n" + std::to_string(n) + "_se");
  }
  for (const char* name : {"d_t_p0_post", "d_t_post_p0", "d_t_p0_post_se", "d_t_post_p0_se", "log_d_t_p0_post",
                           "log_d_t_post_p0", "v_dsm_norm", "d_t_p0_post_norm", "d_t_post_p0_norm"}) {
    header.emplace_back(name);
  }
  csv.header(header);

  Vec v(report.t_grid.size()), da(report.t_grid.size()), db(report.t_grid.size());
  for (std::size_t k = 0; k < report.t_grid.size(); ++k) {
    v[k] = report.v_dsm[k].value;
    da[k] = report.d_p0_post[k].value;
    db[k] = report.d_post_p0[k].value;
  }
  const Vec vn = normalized(v), dan = normalized(da), dbn = normalized(db);
  for (std::size_t k = 0; k < report.t_grid.size(); ++k) {
    Vec row{report.t_grid[k], report.v_dsm[k].value, report.v_dsm[k].std_error};
    for (const auto& [n, column] : report.v_stf) {
      row.push_back(column[k].value);
      row.push_back(column[k].std_error);
    }
    const auto& a = report.d_p0_post[k];
    const auto& b = report.d_post_p0[k];
    for (double x : {a.value, b.value, a.std_error, b.std_error, a.log_value, b.log_value, vn[k], dan[k], dbn[k]}) {
      row.push_back(x);
    }
    csv.row(row);
  }
}

}  // namespace stf
