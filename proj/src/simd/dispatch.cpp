#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "stf/simd.hpp"

namespace stf::simd {

#if defined(STF_HAVE_AVX2)
const KernelTable* avx2_table_impl();
#endif

bool cpu_supports_avx2() {
#if defined(STF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* avx2_kernels() {
#if defined(STF_HAVE_AVX2)
  if (cpu_supports_avx2()) return avx2_table_impl();
#endif
  return nullptr;
}

namespace {

const KernelTable* resolve() {
  const char* env = std::getenv("STF_SIMD");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_kernels();
  if (const KernelTable* t = avx2_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{resolve()};
  return table;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_active(Isa isa) {
  const KernelTable* t = isa == Isa::Scalar ? &scalar_kernels() : avx2_kernels();
  if (t == nullptr) throw std::runtime_error("simd::set_active: AVX2 kernels unavailable on this machine");
  slot().store(t, std::memory_order_release);
}

std::string_view isa_name(Isa isa) { return isa == Isa::Scalar ? "scalar" : "avx2"; }

}  // namespace stf::simd
