#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace cmf::rng {

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

/// Unbiased integer in [0, bound) by rejection.
inline std::size_t uniform_index(std::mt19937_64& g, std::size_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = g();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

/// Fisher-Yates with a fixed draw order, so results do not depend on the
/// standard library's shuffle implementation.
template <class T>
void shuffle(std::span<T> items, std::mt19937_64& g) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[uniform_index(g, i)]);
}

/// Independent stream for (seed, stream) pairs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace cmf::rng
