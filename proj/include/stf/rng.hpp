#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>

namespace stf {

std::uint64_t splitmix64(std::uint64_t x);

/// Seeded generator passed explicitly through every stochastic operation.
/// Substreams are derived by hashing (seed, keys...) so that parallel work
/// keyed by index reproduces the serial result.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

  static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  std::size_t index(std::size_t n);
  void fill_normal(std::span<double> out);

  /// Draws an index from unnormalized nonnegative weights.
  std::size_t categorical(std::span<const double> weights);

  std::uint64_t next_u64() { return engine_(); }

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return serialize() == other.serialize(); }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace stf
