#pragma once

// Slow, obviously-correct 16-bit float codecs used as oracles for the
// library's bit-twiddled versions. Decode is exact (every f16/bf16 value is
// representable in f32); encode rounds to nearest-even via long double math.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace ref {

inline float f16_to_f32(uint16_t h) {
  uint32_t sign = (h >> 15) & 1;
  uint32_t exp = (h >> 10) & 0x1F;
  uint32_t man = h & 0x3FF;
  float mag;
  if (exp == 0) {
    mag = std::ldexp(float(man), -24);  // subnormal: man * 2^-24
  } else if (exp == 31) {
    if (man != 0) return std::numeric_limits<float>::quiet_NaN();
    mag = std::numeric_limits<float>::infinity();
  } else {
    mag = std::ldexp(1.0f + float(man) / 1024.0f, int(exp) - 15);
  }
  return sign ? -mag : mag;
}

inline float bf16_to_f32(uint16_t h) {
  uint32_t bits = uint32_t(h) << 16;
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

// Round-to-nearest-even by scanning all candidate encodings.
inline uint16_t f32_to_f16(float f) {
  if (std::isnan(f)) return 0x7E00;
  uint16_t sign = std::signbit(f) ? 0x8000 : 0;
  double mag = std::fabs(double(f));
  if (std::isinf(f)) return sign | 0x7C00;
  // largest finite f16 magnitude is 65504; halfway to "infinity" is 65520
  if (mag >= 65520.0) return sign | 0x7C00;
  // find the closest representable magnitude among all finite encodings
  uint16_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (uint32_t bits = 0; bits < 0x7C00; bits++) {
    double cand = double(f16_to_f32(uint16_t(bits)));
    double err = std::fabs(cand - mag);
    if (err < best_err ||
        (err == best_err && (bits & 1) == 0 && (best & 1) == 1)) {
      best_err = err;
      best = uint16_t(bits);
    }
  }
  return sign | best;
}

inline uint16_t f32_to_bf16(float f) {
  if (std::isnan(f)) {
    return uint16_t((std::signbit(f) ? 0x8000 : 0) | 0x7FC0);
  }
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  uint32_t hi = bits >> 16;
  uint32_t rem = bits & 0xFFFF;
  if (rem > 0x8000 || (rem == 0x8000 && (hi & 1))) hi++;
  return uint16_t(hi);
}

}  // namespace ref
