#include "mergepipe/dtype.hpp"

#include <cstring>

#include "mergepipe/errors.hpp"

namespace mergepipe {

const char* to_string(DType d) {
  switch (d) {
    case DType::kF32:
      return "f32";
    case DType::kF16:
      return "f16";
    case DType::kBF16:
      return "bf16";
  }
  throw InvalidArgument("unknown dtype value");
}

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f16") return DType::kF16;
  if (s == "bf16") return DType::kBF16;
  throw InvalidArgument("unknown dtype: " + s);
}

size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32:
      return 4;
    case DType::kF16:
    case DType::kBF16:
      return 2;
  }
  throw InvalidArgument("unknown dtype value");
}

void decode_values(std::span<const uint8_t> raw, DType d, std::vector<float>& out) {
  size_t esz = dtype_size(d);
  if (raw.size() % esz != 0) {
    throw CorruptData("decode: byte count not a multiple of element size");
  }
  size_t n = raw.size() / esz;
  out.resize(n);
  const uint8_t* p = raw.data();
  switch (d) {
    case DType::kF32:
      std::memcpy(out.data(), p, raw.size());
      break;
    case DType::kF16:
      for (size_t i = 0; i < n; i++) {
        uint16_t h = uint16_t(p[2 * i]) | (uint16_t(p[2 * i + 1]) << 8);
        out[i] = f16_to_f32(h);
      }
      break;
    case DType::kBF16:
      for (size_t i = 0; i < n; i++) {
        uint16_t h = uint16_t(p[2 * i]) | (uint16_t(p[2 * i + 1]) << 8);
        out[i] = bf16_to_f32(h);
      }
      break;
  }
}

void encode_values(std::span<const float> values, DType d, std::vector<uint8_t>& out) {
  size_t n = values.size();
  out.resize(n * dtype_size(d));
  uint8_t* p = out.data();
  switch (d) {
    case DType::kF32:
      std::memcpy(p, values.data(), out.size());
      break;
    case DType::kF16:
      for (size_t i = 0; i < n; i++) {
        uint16_t h = f32_to_f16(values[i]);
        p[2 * i] = uint8_t(h);
        p[2 * i + 1] = uint8_t(h >> 8);
      }
      break;
    case DType::kBF16:
      for (size_t i = 0; i < n; i++) {
        uint16_t h = f32_to_bf16(values[i]);
        p[2 * i] = uint8_t(h);
        p[2 * i + 1] = uint8_t(h >> 8);
      }
      break;
  }
}

}  // namespace mergepipe
