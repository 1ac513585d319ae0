#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace chiplab {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Node in the hierarchical seed tree. A master seed fans out to named
/// subsystems and indexed substreams; siblings never share state, so adding
/// a new consumer does not perturb the draws seen by existing ones.
class SeedTree {
 public:
  constexpr explicit SeedTree(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  constexpr SeedTree child(std::string_view name) const noexcept {
    return SeedTree(detail::splitmix64(seed_ ^ detail::splitmix64(detail::fnv1a(name))));
  }
  constexpr SeedTree child(std::uint64_t index) const noexcept {
    return SeedTree(detail::splitmix64(detail::splitmix64(seed_) + 0x632BE59BD9B4E019ULL * (index + 1)));
  }

  constexpr std::uint64_t value() const noexcept { return seed_; }

  Rng rng() const { return Rng(detail::splitmix64(seed_)); }

 private:
  std::uint64_t seed_;
};

}  // namespace chiplab
