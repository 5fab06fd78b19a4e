#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace vgrid {

// splitmix64 finalizer; used to derive independent seed streams from one
// user-facing seed without correlated low bits.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for substream `stream` of master seed `seed`. Stable across
/// platforms; used so e.g. exploration draws never disturb scenario
/// synthesis.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 1));
}

/// Uniform double in [0, 1) with 53 random bits. std::uniform_real_distribution
/// is implementation-defined, so traces would not be reproducible across
/// standard libraries; this is.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Rejection sampling, exact.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = gen();
  while (v >= limit) v = gen();
  return v % n;
}

inline std::string rng_to_string(const std::mt19937_64& gen) {
  std::ostringstream os;
  os << gen;
  return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 gen;
  std::istringstream is(s);
  is >> gen;
  return gen;
}

}  // namespace vgrid
