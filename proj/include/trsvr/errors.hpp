#pragma once

#include <stdexcept>
#include <string>

namespace trsvr {

// Error taxonomy shared by the library and the CLI exit-code contract:
// input/configuration problems map to exit 1, numeric failures to exit 2,
// verification failures to exit 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments, configuration values, or preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed text input (LIBSVM data, config files); message carries the
// offending line or key.
class ParseError : public InputError {
 public:
  using InputError::InputError;
};

// Non-finite values or diverging computations. Runs abort with a diagnostic
// instead of clamping.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API contract violations, e.g. a cached anchor gradient that no longer
// matches the anchor point.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An empirical check of a theoretical guarantee failed (strict-mode runs,
// verifier assertions).
class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace trsvr
