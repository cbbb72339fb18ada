#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace hvfcast {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent RNG stream seed from a root seed and a tuple of
// labels. Order matters; the result does not depend on thread scheduling.
inline std::uint64_t derive_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(root);
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(root ^ fnv1a64(label));
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

}  // namespace hvfcast
