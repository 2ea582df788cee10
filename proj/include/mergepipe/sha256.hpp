#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mergepipe {

// Streaming SHA-256 over libcrypto. Digests are lowercase hex throughout the
// catalog and manifest formats.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, size_t len);
  void update(std::span<const uint8_t> data) { update(data.data(), data.size()); }

  // Finalize and reset; the hasher can be reused afterwards.
  std::string finish_hex();
  std::array<uint8_t, 32> finish();

 private:
  void* ctx_;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(std::string_view s);
std::string sha256_hex(std::span<const uint8_t> s);

std::string to_hex(std::span<const uint8_t> bytes);

}  // namespace mergepipe
