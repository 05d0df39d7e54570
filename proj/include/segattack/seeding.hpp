#pragma once

#include <cstdint>

namespace segattack {

// splitmix64 finalizer; used to derive independent per-task seeds from a root.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept {
  return mix_seed(mix_seed(root) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

}  // namespace segattack
