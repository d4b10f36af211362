#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace wkcl {

/// Repository-wide random source: std::mt19937_64 (its output sequence is fixed
/// by the standard) plus distribution code written here, because the standard
/// library's distributions are implementation-defined. Every stochastic choice
/// in the engine goes through this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// An independent stream derived from (seed, tag); used so that adding a new
  /// consumer does not perturb the draws of existing ones.
  static Rng derive(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0); }

  /// Uniform integer on [0, n); n > 0. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via the Box-Muller transform. Consumes two uniforms per
  /// call (the second variate is discarded so the stream position is fixed).
  double normal();

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace wkcl
