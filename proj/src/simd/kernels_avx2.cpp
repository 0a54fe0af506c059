// Compiled with -mavx2 -mfma. Only reached through the dispatch table after
// the CPUID check, so nothing in here may be shared with other TUs.

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "stf/simd.hpp"

namespace stf::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    i += 4;
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

inline __m256d gather_column(const double* refs, std::size_t d, std::size_t j) {
  return _mm256_set_pd(refs[3 * d + j], refs[2 * d + j], refs[d + j], refs[j]);
}

void scaled_sq_dists_avx2(const double* x, const double* refs, std::size_t n, std::size_t d, double scale,
                          double* out) {
  const __m256d vs = _mm256_set1_pd(scale);
  std::size_t k = 0;
  if (d < 4) {
    // Few coordinates: vectorize across four references at a time.
    for (; k + 4 <= n; k += 4) {
      const double* r = refs + k * d;
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t j = 0; j < d; ++j) {
        const __m256d diff = _mm256_fnmadd_pd(vs, gather_column(r, d, j), _mm256_set1_pd(x[j]));
        acc = _mm256_fmadd_pd(diff, diff, acc);
      }
      _mm256_storeu_pd(out + k, acc);
    }
  }
  for (; k < n; ++k) {
    const double* r = refs + k * d;
    __m256d acc = _mm256_setzero_pd();
    std::size_t j = 0;
    for (; j + 4 <= d; j += 4) {
      const __m256d diff = _mm256_fnmadd_pd(vs, _mm256_loadu_pd(r + j), _mm256_loadu_pd(x + j));
      acc = _mm256_fmadd_pd(diff, diff, acc);
    }
    double s = hsum(acc);
    for (; j < d; ++j) {
      const double diff = x[j] - scale * r[j];
      s += diff * diff;
    }
    out[k] = s;
  }
}

void weighted_sum_avx2(const double* w, const double* refs, std::size_t n, std::size_t d, double* out) {
  for (std::size_t j = 0; j < d; ++j) out[j] = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double wk = w[k];
    if (wk == 0.0) continue;
    axpy_avx2(wk, refs + k * d, out, d);
  }
}

// 4 x 8 register block of C accumulated over the full inner dimension.
inline void micro_4x8(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                      std::size_t ldc, std::size_t inner) {
  __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  for (std::size_t k = 0; k < inner; ++k) {
    const __m256d b0 = _mm256_loadu_pd(b + k * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + k * ldb + 4);
    __m256d av = _mm256_broadcast_sd(a + k);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + lda + k);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2 * lda + k);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3 * lda + k);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// One row of C over columns [j0, cols).
inline void row_tail(const double* a, const double* b, std::size_t ldb, double* c, std::size_t inner,
                     std::size_t j0, std::size_t cols) {
  std::size_t j = j0;
  for (; j + 4 <= cols; j += 4) {
    __m256d acc = _mm256_loadu_pd(c + j);
    for (std::size_t k = 0; k < inner; ++k) {
      acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + k), _mm256_loadu_pd(b + k * ldb + j), acc);
    }
    _mm256_storeu_pd(c + j, acc);
  }
  for (; j < cols; ++j) {
    double acc = c[j];
    for (std::size_t k = 0; k < inner; ++k) acc = std::fma(a[k], b[k * ldb + j], acc);
    c[j] = acc;
  }
}

void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t rows, std::size_t inner,
                  std::size_t cols, bool accumulate) {
  if (!accumulate) std::memset(c, 0, rows * cols * sizeof(double));
  const std::size_t row_blocks = rows / 4 * 4;
  const std::size_t col_blocks = cols / 8 * 8;
  // Column strip outermost keeps the inner x 8 slice of B resident in L1.
  for (std::size_t j0 = 0; j0 < col_blocks; j0 += 8) {
    for (std::size_t i0 = 0; i0 < row_blocks; i0 += 4) {
      micro_4x8(a + i0 * inner, inner, b + j0, cols, c + i0 * cols + j0, cols, inner);
    }
  }
  if (col_blocks < cols) {
    for (std::size_t i = 0; i < row_blocks; ++i) {
      row_tail(a + i * inner, b, cols, c + i * cols, inner, col_blocks, cols);
    }
  }
  for (std::size_t i = row_blocks; i < rows; ++i) {
    row_tail(a + i * inner, b, cols, c + i * cols, inner, 0, cols);
  }
}

double sum_distances_avx2(const double* x, const double* ys, std::size_t n, std::size_t d) {
  std::size_t k = 0;
  double total = 0.0;
  if (d < 4) {
    __m256d acc_total = _mm256_setzero_pd();
    for (; k + 4 <= n; k += 4) {
      const double* y = ys + k * d;
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t j = 0; j < d; ++j) {
        const __m256d diff = _mm256_sub_pd(_mm256_set1_pd(x[j]), gather_column(y, d, j));
        acc = _mm256_fmadd_pd(diff, diff, acc);
      }
      acc_total = _mm256_add_pd(acc_total, _mm256_sqrt_pd(acc));
    }
    total = hsum(acc_total);
  }
  for (; k < n; ++k) {
    const double* y = ys + k * d;
    __m256d acc = _mm256_setzero_pd();
    std::size_t j = 0;
    for (; j + 4 <= d; j += 4) {
      const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(x + j), _mm256_loadu_pd(y + j));
      acc = _mm256_fmadd_pd(diff, diff, acc);
    }
    double s = hsum(acc);
    for (; j < d; ++j) {
      const double diff = x[j] - y[j];
      s += diff * diff;
    }
    total += std::sqrt(s);
  }
  return total;
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable table{Isa::Avx2,           "avx2",           dot_avx2,
                                 axpy_avx2,           scaled_sq_dists_avx2, weighted_sum_avx2,
                                 gemm_nn_avx2,        sum_distances_avx2};
  return &table;
}

}  // namespace stf::simd
