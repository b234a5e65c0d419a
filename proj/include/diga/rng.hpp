#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <random>

namespace diga {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Combine a base seed with stream identifiers (epoch, sample index, purpose).
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = mix64(base);
  for (auto p : parts) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Purpose tags so different consumers of one seed never share a stream.
enum class Stream : std::uint64_t {
  scene = 1,
  render = 2,
  longtail = 3,
  augment = 4,
  mask = 5,
  init = 6,
  shuffle = 7,
  target_pick = 8,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream s,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  return derive_seed(base, {static_cast<std::uint64_t>(s), a, b});
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  // Explicit mapping keeps values identical across standard libraries.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

inline bool bernoulli(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

/// Box-Muller standard normal.
inline double normal(Rng& rng) {
  double u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates with the portable integer mapping above.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace diga
