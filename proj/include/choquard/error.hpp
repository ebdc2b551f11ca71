#ifndef CHOQUARD_ERROR_HPP
#define CHOQUARD_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace choquard {

enum class ErrorCode {
  AlphaOutOfRange,
  Overflow,
  GridMismatch,
  TooLarge,
  DilationOutOfBox,
  NegativeInput,
  ZeroMass,
  ModeMismatch,
  NotSubcritical,
  NotSupercritical,
  NoDescentStep,
  NonFinite,
  NoInteriorMax,
  BetaTooLarge,
  GeometryFailed,
  Stalled,
  NotConverged,
  SchemaError,
  RangeError,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
  case ErrorCode::Overflow: return "Overflow";
  case ErrorCode::GridMismatch: return "GridMismatch";
  case ErrorCode::TooLarge: return "TooLarge";
  case ErrorCode::DilationOutOfBox: return "DilationOutOfBox";
  case ErrorCode::NegativeInput: return "NegativeInput";
  case ErrorCode::ZeroMass: return "ZeroMass";
  case ErrorCode::ModeMismatch: return "ModeMismatch";
  case ErrorCode::NotSubcritical: return "NotSubcritical";
  case ErrorCode::NotSupercritical: return "NotSupercritical";
  case ErrorCode::NoDescentStep: return "NoDescentStep";
  case ErrorCode::NonFinite: return "NonFinite";
  case ErrorCode::NoInteriorMax: return "NoInteriorMax";
  case ErrorCode::BetaTooLarge: return "BetaTooLarge";
  case ErrorCode::GeometryFailed: return "GeometryFailed";
  case ErrorCode::Stalled: return "Stalled";
  case ErrorCode::NotConverged: return "NotConverged";
  case ErrorCode::SchemaError: return "SchemaError";
  case ErrorCode::RangeError: return "RangeError";
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure in the library is reported through this exception; the
/// code is what callers (and the CLI exit-status mapping) dispatch on.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string &detail() const noexcept { return detail_; }

private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string &what) {
  if (!cond)
    fail(code, what);
}

} // namespace choquard

#endif
