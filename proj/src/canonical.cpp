#include "mergepipe/canonical.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>

#include "mergepipe/errors.hpp"
#include "mergepipe/sha256.hpp"

namespace mergepipe {

namespace {

void append_escaped(const std::string& s, std::string& out) {
  out += '"';
  for (unsigned char c : s) {
    switch (c) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\b':
        out += "\\b";
        break;
      case '\t':
        out += "\\t";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\f':
        out += "\\f";
        break;
      case '\r':
        out += "\\r";
        break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += char(c);  // UTF-8 passes through unescaped
        }
    }
  }
  out += '"';
}

template <typename T>
void append_number(T v, std::string& out) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

void append_value(const nlohmann::json& j, std::string& out) {
  using value_t = nlohmann::json::value_t;
  switch (j.type()) {
    case value_t::null:
      out += "null";
      return;
    case value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      return;
    case value_t::number_integer:
      append_number(j.get<int64_t>(), out);
      return;
    case value_t::number_unsigned:
      append_number(j.get<uint64_t>(), out);
      return;
    case value_t::number_float: {
      double d = j.get<double>();
      if (!std::isfinite(d)) {
        throw InvalidArgument("canonical_json: non-finite number");
      }
      append_number(d, out);
      return;
    }
    case value_t::string:
      append_escaped(j.get_ref<const std::string&>(), out);
      return;
    case value_t::array: {
      out += '[';
      for (size_t i = 0; i < j.size(); i++) {
        if (i) out += ',';
        append_value(j[i], out);
      }
      out += ']';
      return;
    }
    case value_t::object: {
      // nlohmann::json objects are std::map-backed, already key-sorted
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        append_escaped(it.key(), out);
        out += ':';
        append_value(it.value(), out);
      }
      out += '}';
      return;
    }
    default:
      throw InvalidArgument("canonical_json: unsupported value type");
  }
}

}  // namespace

std::string canonical_json(const nlohmann::json& value) {
  std::string out;
  append_value(value, out);
  return out;
}

std::string canonical_digest(const nlohmann::json& value) {
  return sha256_hex(canonical_json(value));
}

}  // namespace mergepipe
