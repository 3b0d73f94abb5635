// Stateless keyed randomness. Every random quantity in the library is a
// pure function of (seed, keys...), so runs never share generator state.
#pragma once

#include <cstdint>
#include <initializer_list>

namespace slowfast::detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t keyed_hash(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

/// Uniform in [0, 1) with 53 bits of resolution.
constexpr double keyed_uniform(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return static_cast<double>(keyed_hash(seed, keys) >> 11) * 0x1.0p-53;
}

// Salts keep the independent streams apart.
inline constexpr std::uint64_t kSaltJitter = 0x6A69747465720001ull;
inline constexpr std::uint64_t kSaltCorrect = 0x636F727265637402ull;
inline constexpr std::uint64_t kSaltWrong = 0x77726F6E67000003ull;
inline constexpr std::uint64_t kSaltTruth = 0x7472757468000004ull;
inline constexpr std::uint64_t kSaltPrompt = 0x70726F6D70740005ull;
inline constexpr std::uint64_t kSaltRandom = 0x72616E646F6D0006ull;

}  // namespace slowfast::detail
