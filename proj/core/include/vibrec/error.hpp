#pragma once

#include <stdexcept>
#include <string>

namespace vibrec {

/// Invalid user-facing configuration (grid too small, bad plan, empty pools).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation (log of a
/// nonpositive value, zero-variance correlation, undefined SNR).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A precondition on how an operation may be called was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Explicit integration diverged.
class StabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File or directory access failed, or a file is malformed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vibrec
