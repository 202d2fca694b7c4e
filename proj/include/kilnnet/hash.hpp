#pragma once

#include <cstdint>
#include <string_view>

namespace kiln {

/// 64-bit FNV-1a over `seed`'s little-endian bytes followed by `text`.
/// Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i = 0; i < 8; ++i) {
    h ^= (seed >> (8 * i)) & 0xffU;
    h *= 0x100000001b3ULL;
  }
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace kiln
