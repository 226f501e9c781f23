#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace divens {

/// Derives an independent 64-bit stream seed from (seed, purpose tag, index).
/// Every random stream in the library is keyed this way, so results never
/// depend on scheduling or on how work is partitioned.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

/// mt19937_64 with explicit uniform/normal transforms. The standard
/// distributions are implementation-defined, which would break
/// cross-toolchain reproducibility of datasets and initializations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0)
      : engine_(derive_seed(seed, tag, index)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace divens
