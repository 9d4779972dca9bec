#pragma once

#include <cstdint>
#include <random>

namespace sketchfill {

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr uint64_t derive_seed(uint64_t base, uint64_t stream) {
  return mix_seed(base ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

constexpr uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  // Uses the raw 53-bit draw so results do not depend on the stdlib's distribution code.
  double u = double(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  auto span = static_cast<uint64_t>(hi_inclusive - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

inline bool coin(Rng& rng, double p = 0.5) { return uniform(rng, 0.0, 1.0) < p; }

}  // namespace sketchfill
