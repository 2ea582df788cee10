#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mergepipe {

enum class DType : uint8_t {
  kF32,
  kF16,
  kBF16,
};

const char* to_string(DType d);
DType dtype_from_string(const std::string& s);
size_t dtype_size(DType d);

// All merge arithmetic happens in F32; 16-bit payloads are decoded on read
// and re-encoded round-to-nearest-even on write. Decode is exact; encode of
// a decoded value restores the source bits for every non-NaN pattern.

inline float f16_to_f32(uint16_t h) {
  // exponent rebias with a renormalizing subtract for subnormal inputs
  uint32_t em = (uint32_t(h) & 0x7FFFu) << 13;
  uint32_t exp = em & 0x0F800000u;  // f16 exponent field, shifted
  uint32_t bits;
  if (exp == 0x0F800000u) {
    bits = em + (uint32_t(255 - 31) << 23);  // inf or nan, payload kept
  } else if (exp == 0) {
    // zero or subnormal: value is mantissa * 2^-24
    bits = em + (uint32_t(113) << 23);
    float f = std::bit_cast<float>(bits) - std::bit_cast<float>(uint32_t(113) << 23);
    bits = std::bit_cast<uint32_t>(f);
  } else {
    bits = em + (uint32_t(127 - 15) << 23);
  }
  bits |= (uint32_t(h) & 0x8000u) << 16;
  return std::bit_cast<float>(bits);
}

inline uint16_t f32_to_f16(float f) {
  uint32_t x = std::bit_cast<uint32_t>(f);
  uint16_t sign = uint16_t((x >> 16) & 0x8000u);
  x &= 0x7FFFFFFFu;
  if (x > 0x7F800000u) return uint16_t(sign | 0x7E00u);  // nan
  if (x >= 0x47800000u) return uint16_t(sign | 0x7C00u);  // overflow -> inf
  if (x < 0x38800000u) {
    // below the normal range: round value/2^-24 to integer, ties to even
    uint32_t shift = 126u - (x >> 23);
    if (shift >= 25) return sign;
    uint32_t m = (x & 0x7FFFFFu) | 0x800000u;
    uint32_t q = m >> shift;
    uint32_t rem = m & ((1u << shift) - 1);
    uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (q & 1))) q++;
    return uint16_t(sign | q);  // carry into the exponent field is correct
  }
  uint32_t mant = x & 0x7FFFFFu;
  uint32_t exp = (x >> 23) - 112u;
  uint16_t h = uint16_t(sign | (exp << 10) | (mant >> 13));
  uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1))) h++;
  return h;
}

inline float bf16_to_f32(uint16_t h) {
  return std::bit_cast<float>(uint32_t(h) << 16);
}

inline uint16_t f32_to_bf16(float f) {
  uint32_t x = std::bit_cast<uint32_t>(f);
  if ((x & 0x7FFFFFFFu) > 0x7F800000u) {
    return uint16_t(((x >> 16) & 0x8000u) | 0x7FC0u);  // quiet nan
  }
  uint32_t rounding = 0x7FFFu + ((x >> 16) & 1u);
  return uint16_t((x + rounding) >> 16);
}

// Raw little-endian block bytes -> f32 values. byte count must be a multiple
// of dtype_size(d).
void decode_values(std::span<const uint8_t> raw, DType d, std::vector<float>& out);

// f32 values -> raw little-endian block bytes in the target dtype.
void encode_values(std::span<const float> values, DType d, std::vector<uint8_t>& out);

}  // namespace mergepipe
