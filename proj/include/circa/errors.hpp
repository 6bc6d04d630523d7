#pragma once

#include <stdexcept>
#include <string>

namespace circa {

/// Two-party desync, reused single-use material, peer abort, unexpected frame.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A wire label or ciphertext failed its authenticity check.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A computation was requested outside its enumerable guard (e.g. p too large).
struct GuardError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed model manifest, missing tensor file, shape or cap violation.
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace circa
