#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mfhogp {

enum class ErrorCode {
  NotPositiveDefinite,
  DimensionMismatch,
  OverflowingDimensions,
  ConvergenceFailure,
  IndexOutOfRange,
  IndexMapInvalid,
  Diverged,
  TooManyParameters,
  InvalidStepSize,
  UntrainedModel,
  DegenerateEnsemble,
  SolverDiverged,
  InvalidCounts,
  InvalidArgument,
  IoFailure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OverflowingDimensions: return "OverflowingDimensions";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::IndexMapInvalid: return "IndexMapInvalid";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::TooManyParameters: return "TooManyParameters";
    case ErrorCode::InvalidStepSize: return "InvalidStepSize";
    case ErrorCode::UntrainedModel: return "UntrainedModel";
    case ErrorCode::DegenerateEnsemble: return "DegenerateEnsemble";
    case ErrorCode::SolverDiverged: return "SolverDiverged";
    case ErrorCode::InvalidCounts: return "InvalidCounts";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable category.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the category prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace mfhogp
