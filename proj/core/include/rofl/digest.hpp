#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace rofl {

using Digest = std::array<std::uint8_t, 32>;

// SHA-256 (OpenSSL libcrypto).
Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view bytes);

// Incremental SHA-256 for streaming serializations.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view bytes);
  Digest finish();

 private:
  void* ctx_;
};

std::string to_hex(std::span<const std::uint8_t> bytes);
// Throws FormatError unless text is exactly 2*N hex chars.
Digest digest_from_hex(std::string_view text);

}  // namespace rofl
