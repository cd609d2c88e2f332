#pragma once

#include <stdexcept>
#include <string>

namespace fzt {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  NonFinite,
  TapeReused,
  LabelOutOfRange,
  BadMagic,
  VersionMismatch,
  TruncatedPayload,
  ArchMismatch,
  CountMismatch,
  Io,
  NoQualifyingExamples,
  NumericalFailure,
  ConstraintViolation,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::TapeReused: return "tape reused";
    case ErrorCode::LabelOutOfRange: return "label out of range";
    case ErrorCode::BadMagic: return "bad magic";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::TruncatedPayload: return "truncated payload";
    case ErrorCode::ArchMismatch: return "arch mismatch";
    case ErrorCode::CountMismatch: return "count mismatch";
    case ErrorCode::Io: return "io error";
    case ErrorCode::NoQualifyingExamples: return "no qualifying examples";
    case ErrorCode::NumericalFailure: return "numerical failure";
    case ErrorCode::ConstraintViolation: return "constraint violation";
  }
  return "unknown";
}

/// Library-wide exception; `code()` distinguishes failure classes so callers
/// (and tests) need not parse messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace fzt
