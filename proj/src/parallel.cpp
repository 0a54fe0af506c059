#include "stf/parallel.hpp"

#include <atomic>

namespace stf {
namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_max_threads(std::size_t threads) { g_threads.store(threads == 0 ? 1 : threads); }

std::size_t max_threads() { return g_threads.load(); }

}  // namespace stf
