#include "wkcl/error.hpp"

namespace wkcl {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NearZeroNorm: return "NearZeroNorm";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::BadVersion: return "BadVersion";
    case ErrorKind::BadManifest: return "BadManifest";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorKind::InfeasibleSeparation: return "InfeasibleSeparation";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::MissingSnapshot: return "MissingSnapshot";
    case ErrorKind::DuplicateTask: return "DuplicateTask";
    case ErrorKind::EmptyMemory: return "EmptyMemory";
    case ErrorKind::PrivacyViolation: return "PrivacyViolation";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::Undefined: return "Undefined";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

ErrorClass classify(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
      return ErrorClass::Config;
    case ErrorKind::NearZeroNorm:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::InfeasibleSeparation:
      return ErrorClass::Numerical;
    default:
      return ErrorClass::Data;
  }
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

Error Error::with_context(const std::string& context) const {
  Error copy(*this);
  static_cast<std::runtime_error&>(copy) = std::runtime_error(context + ": " + what());
  return copy;
}

void raise(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace wkcl
