#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace uop {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define UOP_CHECK(cond, msg)                      \
  do {                                            \
    if (!(cond)) throw ::uop::Error(msg);         \
  } while (0)

// FNV-1a, used for config hashes, tokenizer ids and record seeds.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace uop
