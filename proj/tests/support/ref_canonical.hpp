#pragma once

// Independent canonical-JSON serializer used to cross-check the library's
// digest input bytes. Deliberately different construction: printf-based float
// formatting (minimal %g precision that round-trips) instead of std::to_chars,
// table-free escaping, and explicit key sorting.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace ref {

inline std::string format_double(double v) {
  if (v != v || v == std::numeric_limits<double>::infinity() ||
      v == -std::numeric_limits<double>::infinity()) {
    throw std::runtime_error("non-finite");
  }
  char buf[64];
  for (int prec = 1; prec <= 17; prec++) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back = std::strtod(buf, nullptr);
    if (std::memcmp(&back, &v, 8) == 0) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_string(const std::string& s, std::string& out) {
  out += '"';
  for (unsigned char c : s) {
    if (c == '"') {
      out += "\\\"";
    } else if (c == '\\') {
      out += "\\\\";
    } else if (c == 0x08) {
      out += "\\b";
    } else if (c == 0x09) {
      out += "\\t";
    } else if (c == 0x0A) {
      out += "\\n";
    } else if (c == 0x0C) {
      out += "\\f";
    } else if (c == 0x0D) {
      out += "\\r";
    } else if (c < 0x20) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\u%04x", c);
      out += buf;
    } else {
      out += char(c);
    }
  }
  out += '"';
}

inline void write_value(const nlohmann::json& j, std::string& out) {
  using value_t = nlohmann::json::value_t;
  switch (j.type()) {
    case value_t::null:
      out += "null";
      break;
    case value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      break;
    case value_t::number_integer:
      out += std::to_string(j.get<int64_t>());
      break;
    case value_t::number_unsigned:
      out += std::to_string(j.get<uint64_t>());
      break;
    case value_t::number_float:
      out += format_double(j.get<double>());
      break;
    case value_t::string:
      write_string(j.get<std::string>(), out);
      break;
    case value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& item : j) {
        if (!first) out += ',';
        first = false;
        write_value(item, out);
      }
      out += ']';
      break;
    }
    case value_t::object: {
      std::vector<std::string> keys;
      for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
      std::sort(keys.begin(), keys.end());
      out += '{';
      bool first = true;
      for (const auto& k : keys) {
        if (!first) out += ',';
        first = false;
        write_string(k, out);
        out += ':';
        write_value(j.at(k), out);
      }
      out += '}';
      break;
    }
    default:
      throw std::runtime_error("unsupported json type");
  }
}

inline std::string canonical_json(const nlohmann::json& j) {
  std::string out;
  write_value(j, out);
  return out;
}

}  // namespace ref
