#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace stf {

/// Neumaier-compensated sum.
inline double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double carry = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      carry += (sum - t) + v;
    } else {
      carry += (v - t) + sum;
    }
    sum = t;
  }
  return sum + carry;
}

inline double max_of(std::span<const double> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = v > m ? v : m;
  return m;
}

/// log sum_i exp(logits_i), shifted by the maximum.
inline double log_sum_exp(std::span<const double> logits) {
  const double m = max_of(logits);
  if (!std::isfinite(m)) return m;
  std::vector<double> shifted(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) shifted[i] = std::exp(logits[i] - m);
  return m + std::log(compensated_sum(shifted));
}

/// In place: logits -> softmax(logits). The largest logit maps to exp(0), so
/// the normalizer is at least 1 and nothing underflows to 0/0.
inline void softmax_inplace(std::span<double> logits) {
  const double m = max_of(logits);
  for (double& v : logits) v = std::exp(v - m);
  const double inv = 1.0 / compensated_sum(logits);
  for (double& v : logits) v *= inv;
}

/// Running mean / second central moment, mergeable in a fixed order.
struct MomentAccumulator {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }

  void merge(const MomentAccumulator& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double n = static_cast<double>(count + other.count);
    const double delta = other.mean - mean;
    mean += delta * static_cast<double>(other.count) / n;
    m2 += other.m2 + delta * delta * static_cast<double>(count) * static_cast<double>(other.count) / n;
    count += other.count;
  }

  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double std_error() const { return count > 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0; }
};

/// Scalar Monte-Carlo estimate.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

inline Estimate to_estimate(const MomentAccumulator& acc) { return {acc.mean, acc.std_error(), acc.count}; }

}  // namespace stf
