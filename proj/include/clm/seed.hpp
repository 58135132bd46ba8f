#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace clm {

// FNV-1a, used for stable hashing of names and serialized artifacts.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named sub-seed of a root seed. Streams for different names are independent,
// so adding a consumer never perturbs an existing one.
inline std::uint64_t sub_seed(std::uint64_t root, std::string_view name) {
  return splitmix64(root ^ fnv1a(name));
}

inline std::uint64_t sub_seed(std::uint64_t root, std::string_view name, std::uint64_t index) {
  return splitmix64(sub_seed(root, name) + splitmix64(index));
}

using Rng = std::mt19937_64;

}  // namespace clm
