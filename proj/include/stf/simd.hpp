#pragma once

// Data-parallel inner loops used by the target, variance, model and metric
// code. Every kernel has a portable scalar reference and, on x86-64, an
// AVX2/FMA variant compiled in its own translation unit. The active table is
// chosen once at startup from CPUID; STF_SIMD=scalar|avx2 overrides it.
//
// The two tables agree to rounding (FMA contraction and lane-wise partial
// sums reorder additions), not bit-for-bit. Each table on its own is
// deterministic: results never depend on thread count or call history.

#include <cstddef>
#include <string_view>

namespace stf::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // out[k] = || x - scale * refs[k] ||^2 for k < n, refs row-major n x d.
  void (*scaled_sq_dists)(const double* x, const double* refs, std::size_t n, std::size_t d, double scale,
                          double* out);

  // out[j] = sum_k w[k] * refs[k][j]
  void (*weighted_sum)(const double* w, const double* refs, std::size_t n, std::size_t d, double* out);

  // C (rows x cols) = A (rows x inner) * B (inner x cols), or C += A*B when
  // accumulate is set. All row-major, no padding.
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t rows, std::size_t inner,
                  std::size_t cols, bool accumulate);

  // sum_k || x - ys[k] ||, ys row-major n x d.
  double (*sum_distances)(const double* x, const double* ys, std::size_t n, std::size_t d);
};

const KernelTable& scalar_kernels();

// nullptr when the build has no AVX2 variant or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

bool cpu_supports_avx2();

// Table used by the library. Resolved on first call.
const KernelTable& active();

// Test hook: pin the active table. Throws if the ISA is unavailable.
void set_active(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace stf::simd
