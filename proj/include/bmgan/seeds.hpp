#pragma once

#include <cstdint>
#include <string_view>

namespace bmgan {

/// SplitMix64 finalizer. Used to turn structured keys into well-mixed seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Labeled sub-seed: derive_seed(seed, "data"), derive_seed(seed, "init", 2), ...
/// Every source of randomness in the toolkit is keyed through this function.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(seed ^ fnv1a(label)) + mix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace bmgan
