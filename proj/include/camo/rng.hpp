#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>

#include "camo/common.hpp"

namespace camo {

// Deterministic random source. Wraps mt19937_64 but implements the
// uniform/normal mappings explicitly so draws are reproducible bit-for-bit
// and the full state (including the Box-Muller spare) serializes into
// checkpoints.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Named substream: independent generator derived from (seed, name).
  static Rng stream(std::uint64_t seed, const std::string& name) {
    return Rng(fnv1a(name, seed * 0x9e3779b97f4a7c15ull + 0x853c49e6748fea9bull));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value is cached.
  double normal();

  int uniform_int(int lo, int hi);  // inclusive bounds

  void save(std::ostream& os) const;
  void load(std::istream& is);

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && has_spare_ == other.has_spare_ &&
           (!has_spare_ || spare_ == other.spare_);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace camo
