#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace advamd {

// 64-bit FNV-1a, used for checkpoint checksums and content fingerprints.
class Fnv1a {
 public:
  void bytes(std::span<const std::uint8_t> data) {
    for (std::uint8_t b : data) {
      state_ ^= b;
      state_ *= 0x100000001B3ULL;
    }
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= static_cast<std::uint8_t>(v >> (8 * i));
      state_ *= 0x100000001B3ULL;
    }
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void doubles(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }

  void text(std::string_view s) {
    for (char c : s) {
      state_ ^= static_cast<std::uint8_t>(c);
      state_ *= 0x100000001B3ULL;
    }
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

}  // namespace advamd
