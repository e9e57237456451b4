#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace fbsde {

// Incremental FNV-1a (64-bit). Used for config digests (checkpoint binding)
// and noise-stream digests (common-random-number verification).
class Fnv1a64 {
 public:
  void absorb(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h_ ^= static_cast<std::uint64_t>(p[i]);
      h_ *= 0x100000001B3ull;
    }
  }
  void absorb(const std::string& s) { absorb(s.data(), s.size()); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ull;
};

inline std::uint64_t fnv1a64(const std::string& s) {
  Fnv1a64 h;
  h.absorb(s);
  return h.value();
}

std::string to_hex16(std::uint64_t v);

}  // namespace fbsde
