#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mop {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based seed derivation. Every stochastic stage draws its seed as
/// derive_seed(master, "<stage>", i...) so stages reproduce independently of
/// the order they run in.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                           std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
  std::uint64_t h = splitmix64(master ^ fnv1a(stage));
  h = splitmix64(h ^ a);
  return splitmix64(h + 0x632be59bd9b4e019ULL * (b + 1));
}

/// Uniform double in the open interval (0, 1) from a 64-bit key.
inline double hash_uniform(std::uint64_t key) noexcept {
  return (static_cast<double>(splitmix64(key) >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard Gumbel(0,1) sample: -ln(-ln u).
inline double hash_gumbel(std::uint64_t key) noexcept {
  return -std::log(-std::log(hash_uniform(key)));
}

/// Standard normal sample via Box-Muller on two hashed uniforms.
inline double hash_normal(std::uint64_t key) noexcept {
  const double u1 = hash_uniform(key);
  const double u2 = hash_uniform(key ^ 0xd1b54a32d192ed03ULL);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace mop
