#pragma once

#include <string>

#include "json.hpp"

namespace mergepipe {

// Canonical JSON form used for every digest in the system:
//   - object keys sorted ascending by byte value
//   - no insignificant whitespace
//   - integers unquoted
//   - doubles as the shortest decimal that round-trips (std::to_chars)
//   - non-finite numbers are rejected
// Two values with equal canonical bytes are the same record.
std::string canonical_json(const nlohmann::json& value);

// SHA-256 hex of the canonical form. canonical_digest({}) is pinned by tests.
std::string canonical_digest(const nlohmann::json& value);

}  // namespace mergepipe
