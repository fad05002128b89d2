#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace simclr {

/// 64-bit FNV-1a, chainable through `state`.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t state = 0xcbf29ce484222325ull) {
  for (std::byte b : bytes) {
    state ^= static_cast<std::uint64_t>(b);
    state *= 0x100000001b3ull;
  }
  return state;
}

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t state = 0xcbf29ce484222325ull) {
  return fnv1a(std::as_bytes(std::span(text.data(), text.size())), state);
}

template <typename T>
std::uint64_t fnv1a_values(std::span<const T> values, std::uint64_t state = 0xcbf29ce484222325ull) {
  return fnv1a(std::as_bytes(values), state);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace simclr
