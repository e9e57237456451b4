#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

// Counter-based Gaussian noise. Every draw is a pure function of a small
// integer key, so batches can be generated in any order (or in parallel, or
// in chunks) and still produce bit-identical streams for a given seed.

namespace fbsde {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Absorb a list of words into one well-mixed 64-bit key.
inline std::uint64_t mix_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6A09E667F3BCC908ull;
  for (std::uint64_t w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

// Domain separators so independent uses of the same seed never share draws.
enum : std::uint64_t {
  kDomainNoise = 0x4E4F495345ull,   // path noise increments
  kDomainInit = 0x494E4954ull,      // network parameter init
  kDomainMisc = 0x4D495343ull,
};

inline double u64_to_unit(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;  // [0, 1)
}

// Standard normal draw for a fully-specified key (Box-Muller, cosine branch).
inline double key_normal(std::uint64_t key) {
  const double u1 = 1.0 - u64_to_unit(splitmix64(key + 1));  // (0, 1]
  const double u2 = u64_to_unit(splitmix64(key + 2));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

inline double key_normal(std::initializer_list<std::uint64_t> words) {
  return key_normal(mix_key(words));
}

// Small sequential stream (splitmix64 generator) for parameter init.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix_key({seed, kDomainInit})) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform() { return u64_to_unit(next_u64()); }  // [0, 1)

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = 1.0 - u64_to_unit(next_u64());
    const double u2 = u64_to_unit(next_u64());
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace fbsde
