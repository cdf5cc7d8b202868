#pragma once

// Random streams.
//
// Every stream in the library is a xoshiro256** generator whose state is
// filled by splitmix64 from a single 64-bit key. Keys are derived with
// `derive_key`, so a stream is a pure function of (master seed, path of
// integers). Uniform and exponential variates are computed here instead of
// through <random> distributions, whose output is implementation-defined;
// this keeps results bit-identical across standard libraries.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace fragsim {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Key of the `index`-th child stream of `parent`.
inline constexpr std::uint64_t derive_key(std::uint64_t parent,
                                          std::uint64_t index) noexcept {
  return splitmix64(splitmix64(parent) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

/// Seed of replica `index` under `master_seed`.
inline constexpr std::uint64_t replica_seed(std::uint64_t master_seed,
                                            std::uint64_t index) noexcept {
  return derive_key(master_seed ^ 0x5851F42D4C957F2DULL, index);
}

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t key = 0) noexcept { reseed(key); }

  void reseed(std::uint64_t key) noexcept {
    std::uint64_t x = key;
    for (auto& w : state_) {
      x += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      w = z ^ (z >> 31);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

/// Uniform on the open interval (0, 1), 53-bit resolution.
template <class URBG>
double uniform01(URBG& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Exponential with the given rate (mean 1/rate).
template <class URBG>
double exponential(URBG& rng, double rate) {
  return -std::log(uniform01(rng)) / rate;
}

/// Bernoulli(p) draw.
template <class URBG>
bool bernoulli(URBG& rng, double p) {
  return uniform01(rng) < p;
}

}  // namespace fragsim
