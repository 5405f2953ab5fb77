#pragma once

// Seeded random helpers built directly on mt19937_64 output bits.  The
// standard distributions are implementation-defined, so drawing from raw
// bits keeps synthesized data and test fixtures reproducible everywhere.

#include <cstdint>
#include <random>

namespace ratprog::rng {

using Engine = std::mt19937_64;

// Uniform in [0, 1) with 53-bit resolution.
inline double canonical(Engine& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Engine& g, double lo, double hi) {
  return lo + (hi - lo) * canonical(g);
}

// Uniform over {lo, ..., hi}.  The modulo bias is far below any tolerance
// used here; determinism is what matters.
inline long long uniform_int(Engine& g, long long lo, long long hi) {
  std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<long long>(g() % span);
}

}  // namespace ratprog::rng
