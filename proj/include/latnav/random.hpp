#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace latnav {

using Rng = std::mt19937_64;

// Stateless seed derivation (splitmix64 finalizer over the mixed inputs), so
// that sub-streams do not depend on how many values a parent consumed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
  return mix_seed(mix_seed(seed, a), b);
}

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

// Fisher-Yates with explicit index draws; std::shuffle's draw pattern is
// implementation-defined.
template <class T>
void seeded_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace latnav
