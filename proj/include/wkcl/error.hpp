#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wkcl {

enum class ErrorKind {
  // numerics
  NearZeroNorm,
  IndexOutOfRange,
  ShapeMismatch,
  NonFiniteLoss,
  // embedding store
  IoError,
  InvariantViolation,
  BadVersion,
  BadManifest,
  SizeMismatch,
  LabelOutOfRange,
  NonFiniteEntry,
  InfeasibleSeparation,
  // pipeline stages
  EmptyPool,
  MissingSnapshot,
  DuplicateTask,
  EmptyMemory,
  PrivacyViolation,
  EmptySplit,
  Undefined,
  // engine
  ConfigError,
};

std::string_view to_string(ErrorKind kind);

/// Coarse failure class used for CLI exit codes.
enum class ErrorClass { Config, Data, Numerical };

ErrorClass classify(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

  /// Returns a copy of this error with `context` prefixed to the message.
  Error with_context(const std::string& context) const;

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& what);

}  // namespace wkcl
