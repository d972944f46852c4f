#pragma once

#include <stdexcept>
#include <string>

namespace apseg {

/// Shape or extent disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, truncated or mismatched on-disk artifact.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stored config hash does not match the active configuration.
class ConfigHashMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

/// NaN or Inf produced by a forward op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration text or value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace apseg
