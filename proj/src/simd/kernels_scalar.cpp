#include <cmath>
#include <cstring>

#include "stf/simd.hpp"

namespace stf::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scaled_sq_dists_scalar(const double* x, const double* refs, std::size_t n, std::size_t d, double scale,
                            double* out) {
  for (std::size_t k = 0; k < n; ++k) {
    const double* r = refs + k * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - scale * r[j];
      acc += diff * diff;
    }
    out[k] = acc;
  }
}

void weighted_sum_scalar(const double* w, const double* refs, std::size_t n, std::size_t d, double* out) {
  for (std::size_t j = 0; j < d; ++j) out[j] = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double wk = w[k];
    if (wk == 0.0) continue;
    const double* r = refs + k * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += wk * r[j];
  }
}

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t rows, std::size_t inner,
                    std::size_t cols, bool accumulate) {
  if (!accumulate) std::memset(c, 0, rows * cols * sizeof(double));
  for (std::size_t i = 0; i < rows; ++i) {
    double* ci = c + i * cols;
    const double* ai = a + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = ai[k];
      const double* bk = b + k * cols;
      for (std::size_t j = 0; j < cols; ++j) ci[j] += aik * bk[j];
    }
  }
}

double sum_distances_scalar(const double* x, const double* ys, std::size_t n, std::size_t d) {
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double* y = ys + k * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - y[j];
      acc += diff * diff;
    }
    total += std::sqrt(acc);
  }
  return total;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::Scalar,           "scalar",           dot_scalar,
                                 axpy_scalar,           scaled_sq_dists_scalar, weighted_sum_scalar,
                                 gemm_nn_scalar,        sum_distances_scalar};
  return table;
}

}  // namespace stf::simd
