#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

namespace mustr {

// FNV-1a, used to fingerprint memory entries for causality checks.
struct Fnv1a {
  std::uint64_t state = 0xcbf29ce484222325ull;

  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 0x100000001b3ull;
    }
  }

  template <class T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }

  template <class T>
  void update_vector(const std::vector<T>& v) {
    update_value(v.size());
    if (!v.empty()) update(v.data(), v.size() * sizeof(T));
  }

  std::uint64_t digest() const { return state; }
};

}  // namespace mustr
