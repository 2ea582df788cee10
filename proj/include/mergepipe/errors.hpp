#pragma once

#include <stdexcept>
#include <string>

namespace mergepipe {

// Base for all library errors. CLI maps subtypes to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad caller input: unknown dtype, invalid operator params, malformed plan.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Filesystem/OS failure: open, read, write, rename, fsync.
class IoError : public Error {
 public:
  using Error::Error;
};

// Structural damage: bad magic, truncated payload, inconsistent header,
// malformed catalog line.
class CorruptData : public Error {
 public:
  using Error::Error;
};

// Tensor structure disagreement between checkpoints being merged or analyzed.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class MissingTensor : public Error {
 public:
  using Error::Error;
};

// Attempt to overwrite a committed manifest with different content.
class ImmutabilityViolation : public Error {
 public:
  using Error::Error;
};

// Snapshot failed hash or consistency checks.
class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace mergepipe
