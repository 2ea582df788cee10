#include "mergepipe/sha256.hpp"

#include <openssl/evp.h>

#include <algorithm>

#include "mergepipe/errors.hpp"

namespace mergepipe {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

}  // namespace

Sha256::Sha256() {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha256: digest init failed");
  }
  ctx_ = ctx;
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(const void* data, size_t len) {
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1) {
    throw IoError("sha256: digest update failed");
  }
}

std::string Sha256::finish_hex() {
  std::array<uint8_t, 32> digest = finish();
  return to_hex(std::span<const uint8_t>(digest.data(), digest.size()));
}

std::array<uint8_t, 32> Sha256::finish() {
  EVP_MD_CTX* ctx = static_cast<EVP_MD_CTX*>(ctx_);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx, digest, &len) != 1 || len != 32) {
    throw IoError("sha256: digest final failed");
  }
  if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256: digest reinit failed");
  }
  std::array<uint8_t, 32> out;
  std::copy(digest, digest + 32, out.begin());
  return out;
}

std::string sha256_hex(const void* data, size_t len) {
  Sha256 h;
  h.update(data, len);
  return h.finish_hex();
}

std::string sha256_hex(std::string_view s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_hex(std::span<const uint8_t> s) {
  return sha256_hex(s.data(), s.size());
}

std::string to_hex(std::span<const uint8_t> bytes) {
  std::string out(bytes.size() * 2, '0');
  for (size_t i = 0; i < bytes.size(); i++) {
    out[2 * i] = kHexDigits[bytes[i] >> 4];
    out[2 * i + 1] = kHexDigits[bytes[i] & 0xF];
  }
  return out;
}

}  // namespace mergepipe
