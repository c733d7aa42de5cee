#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <string_view>

namespace neuroalign {

using Rng = std::mt19937_64;

namespace detail {
inline std::atomic<std::uint64_t>& global_seed_slot() {
  static std::atomic<std::uint64_t> seed{0};
  return seed;
}

// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}
}  // namespace detail

// Every random stream in a run (parameter init, shuffling, dropout, synthetic data)
// is derived from this seed plus a stream name.
inline void set_global_seed(std::uint64_t seed) { detail::global_seed_slot().store(seed); }
inline std::uint64_t global_seed() { return detail::global_seed_slot().load(); }

inline Rng derive_rng(std::uint64_t seed, std::string_view stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(detail::fnv1a(stream)),
                    static_cast<std::uint32_t>(detail::fnv1a(stream) >> 32)};
  return Rng(seq);
}

inline Rng derive_rng(std::string_view stream) { return derive_rng(global_seed(), stream); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace neuroalign
