#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace i2i {

// Portable random source. The standard distributions are implementation
// defined, so uniform and normal draws are derived here from raw
// mt19937_64 output to keep sequences identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal via Box-Muller; the spare value is cached.
  double normal();

  /// Text form of the full generator state, including the cached normal.
  std::string state() const;
  void set_state(const std::string& text);

  bool operator==(const Rng& other) const;

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace i2i
