#include "stf/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "stf/numerics.hpp"
#include "stf/parallel.hpp"
#include "stf/simd.hpp"

namespace stf {
namespace {

void check_sets(const Points& a, const Points& b, const char* what) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(what) + ": empty sample set");
  require_same_dim(a.dim(), b.dim(), what);
}

}  // namespace

double mean_pair_distance(const Points& a, const Points& b) {
  check_sets(a, b, "mean_pair_distance");
  const auto& kernels = simd::active();
  Vec per_row(a.rows());
  parallel_for(a.rows(), [&](std::size_t i) {
    per_row[i] = kernels.sum_distances(a.row(i).data(), b.data(), b.rows(), b.dim());
  });
  return compensated_sum(per_row) / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

double energy_distance(const Points& a, const Points& b) {
  check_sets(a, b, "energy_distance");
  return 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
}

Vec sample_mean(const Points& x) {
  if (x.empty()) throw std::invalid_argument("sample_mean: empty sample set");
  Vec mean(x.dim(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += r[j];
  }
  for (double& v : mean) v /= static_cast<double>(x.rows());
  return mean;
}

Vec sample_covariance(const Points& x) {
  if (x.rows() < 2) throw std::invalid_argument("sample_covariance: need at least two samples");
  const std::size_t d = x.dim();
  const Vec mean = sample_mean(x);
  Vec cov(d * d, 0.0);
  Vec c(d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    for (std::size_t j = 0; j < d; ++j) c[j] = r[j] - mean[j];
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < d; ++k) cov[j * d + k] += c[j] * c[k];
    }
  }
  for (double& v : cov) v /= static_cast<double>(x.rows() - 1);
  return cov;
}

double covariance_identity_error(const Points& x) {
  const std::size_t d = x.dim();
  const Vec cov = sample_covariance(x);
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = cov[j * d + k] - (j == k ? 1.0 : 0.0);
      s += diff * diff;
    }
  }
  return std::sqrt(s / static_cast<double>(d));
}

MomentDiagnostics moment_diagnostics(const Points& a, const Points& b) {
  check_sets(a, b, "moment_diagnostics");
  MomentDiagnostics m{sample_mean(a), sample_mean(b)};
  double gap = 0.0;
  for (std::size_t j = 0; j < m.mean_a.size(); ++j) {
    const double diff = m.mean_a[j] - m.mean_b[j];
    gap += diff * diff;
  }
  m.mean_gap = std::sqrt(gap);
  if (a.rows() >= 2 && b.rows() >= 2) {
    const Vec ca = sample_covariance(a);
    const Vec cb = sample_covariance(b);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < ca.size(); ++k) {
      num += (ca[k] - cb[k]) * (ca[k] - cb[k]);
      den += cb[k] * cb[k];
    }
    m.covariance_gap = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  }
  return m;
}

nlohmann::json to_json(const MomentDiagnostics& m) {
  return {{"mean_a", m.mean_a}, {"mean_b", m.mean_b}, {"mean_gap", m.mean_gap}, {"covariance_gap", m.covariance_gap}};
}

}  // namespace stf
