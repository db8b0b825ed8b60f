#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace fewshot {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

// FNV-1a over the raw bytes of a file, as hex. Throws IoError.
std::string file_fingerprint(const std::string& path);

}  // namespace fewshot
