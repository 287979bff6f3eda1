#pragma once

#include <cstdint>
#include <initializer_list>

namespace ser {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Stateless hash of a key tuple; every call with the same words returns
/// the same value.
constexpr std::uint64_t counter_hash(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t w : words) h = mix64(h ^ mix64(w));
  return h;
}

/// Uniform double in [0, 1) with 53 random bits.
constexpr double to_unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Identifies one dropout application so its mask can be regenerated:
/// (seed, epoch, step within the epoch, layer index), plus the element index
/// supplied at sampling time.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t layer = 0;

  double uniform(std::uint64_t element) const {
    return to_unit_interval(counter_hash({seed, epoch, step, layer, element}));
  }
};

}  // namespace ser
