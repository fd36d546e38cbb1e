#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace vf {

// FNV-1a 64-bit. Content digests here identify configs and detect
// checkpoint corruption; they are not cryptographic.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ull) {
  uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), n), seed);
}

inline std::string digest_hex(uint64_t h) {
  static const char* kHex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = kHex[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace vf
