#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cevae {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a base seed and any number of integer tags.
constexpr std::uint64_t derive_seed(std::uint64_t base) { return splitmix64(base); }
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, Tags... rest) {
  return derive_seed(splitmix64(base ^ splitmix64(tag + 0x632be59bd9b4e019ULL)), static_cast<std::uint64_t>(rest)...);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Stream for one slice: keyed by (seed, patient, slice) so results do not depend on scheduling.
inline Rng slice_rng(std::uint64_t seed, std::string_view patient_id, int slice_index) {
  return Rng(derive_seed(seed, fnv1a(patient_id), static_cast<std::uint64_t>(slice_index)));
}

}  // namespace cevae
