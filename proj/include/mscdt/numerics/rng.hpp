#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace mscdt {

/// Counter-based generator: draw i of stream (seed, key) is a pure function
/// of (seed, key, i), so streams can be split and replayed without sharing
/// state. The mixing function is the SplitMix64 finalizer.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t seed, std::uint64_t key = 0)
      : seed_(seed), key_(key) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Independent child stream; the parent is not advanced.
  constexpr CounterRng split(std::uint64_t key) const {
    return CounterRng(seed_, mix(key_ ^ mix(key + 0x9e3779b97f4a7c15ULL)));
  }
  CounterRng split(std::string_view name) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
      h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    }
    return split(h);
  }

  constexpr std::uint64_t at(std::uint64_t counter) const {
    return mix(seed_ * 0x9e3779b97f4a7c15ULL ^
               mix(key_ + counter * 0xd1b54a32d192ed03ULL + 1));
  }

  std::uint64_t next_u64() { return at(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one output per two uniforms so that
  /// draw positions stay independent of caller history.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mscdt
