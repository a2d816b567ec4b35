#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace graph_adapter::detail {

// splitmix64 finalizer; used to derive independent streams from one seed.
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

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

// Named stream tags keep unrelated consumers of one seed independent.
namespace stream {
inline constexpr std::uint64_t prototypes = 0x70726f746fULL;
inline constexpr std::uint64_t text = 0x74657874ULL;
inline constexpr std::uint64_t train = 0x747261696eULL;
inline constexpr std::uint64_t test = 0x74657374ULL;
inline constexpr std::uint64_t partition = 0x7061727469ULL;
inline constexpr std::uint64_t shuffle = 0x73687566ULL;
inline constexpr std::uint64_t init = 0x696e6974ULL;
}  // namespace stream

}  // namespace graph_adapter::detail
