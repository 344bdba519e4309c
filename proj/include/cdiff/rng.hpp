#pragma once

// Seeded, platform-independent random streams.
//
// Every random draw in the simulator comes from a named substream derived
// from a single 64-bit master seed, so a scenario is reproducible from
// (seed, label, index) alone. The generator is xoshiro256** seeded through
// splitmix64; normals use Box-Muller on our own uniforms so that outputs do
// not depend on the standard library's distribution implementations.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace cdiff {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b * 0xD6E8FEB86659FD93ull);
  return splitmix64(s);
}

/// FNV-1a; used for labels, ids and fingerprints.
inline constexpr std::uint64_t fnv1a(std::string_view text,
                                     std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
  }

  std::uint64_t next_u64() {
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

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal; consumes exactly two uniforms per call.
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

/// Named substream factory over one master seed.
///
/// Labels used by the simulator: "init", "shared", "local", "channel".
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t master_seed) : seed_(master_seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  Rng stream(std::string_view label, std::uint64_t index = 0) const {
    return Rng(derive(label, {index}));
  }

  Rng stream(std::string_view label, std::initializer_list<std::uint64_t> path) const {
    return Rng(derive(label, path));
  }

  /// Child seed for a nested scope (e.g. one repetition of a sweep cell).
  RngStreams child(std::initializer_list<std::uint64_t> path) const {
    return RngStreams(derive("child", path));
  }

 private:
  std::uint64_t derive(std::string_view label,
                       std::initializer_list<std::uint64_t> path) const {
    std::uint64_t h = mix64(seed_, fnv1a(label));
    for (auto part : path) h = mix64(h, part);
    return h;
  }

  std::uint64_t seed_;
};

}  // namespace cdiff
