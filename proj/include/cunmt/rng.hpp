#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cunmt {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to turn (seed, stream, round) tuples into
// well-spread engine seeds so that every consumer of randomness owns an
// independent, replayable stream.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Rng derive_rng(std::uint64_t seed, std::string_view stream,
                      std::initializer_list<std::uint64_t> parts = {}) {
  std::uint64_t s = mix64(seed ^ hash_tag(stream));
  for (std::uint64_t p : parts) s = mix64(s ^ p);
  return Rng(s);
}

}  // namespace cunmt
