#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace bronchograde {

/// Derives a sub-seed from a root seed and a list of coordinates (grade, index, ...),
/// so that per-item randomness does not depend on processing order.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> coords);

/// mt19937_64 with distribution helpers whose output is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bronchograde
