#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace worldlab {

using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates adjacent integer seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent stream id for (base seed, lane, sub-lane). Every component that
// needs its own stream derives one here instead of sharing a global engine.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t lane,
                                 std::uint64_t sub = 0) {
  return mix_seed(base ^ mix_seed(lane ^ mix_seed(sub)));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix_seed(seed)); }

// Uniform on the open interval (0,1). Built from raw engine output rather
// than std::uniform_real_distribution, whose output is implementation
// defined; replayed logs must not depend on the standard library vendor.
inline double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// Uniform integer in [0, n). n is tiny throughout this project.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  return rng() % n;
}

// Standard normal via Box-Muller, same portability rationale as uniform01.
inline double normal01(Rng& rng) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

template <typename T>
void shuffle_inplace(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_below(rng, i)]);
  }
}

}  // namespace worldlab
