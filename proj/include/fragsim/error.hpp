#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fragsim {

enum class ErrorCode {
  SumExceedsOne,
  NonPositiveEntry,
  NonFiniteEntry,
  EmptyPartition,
  TrivialSplit,
  InvalidModel,
  UnknownFamily,
  RateNotComputable,
  BelowPLower,
  NotComputable,
  BracketNotFound,
  AmbiguousBracket,
  ModelNotFinite,
  BudgetExceeded,
  DustNotSupported,
  BarrierFlagsMissing,
  NonPositiveRate,
  NegativePNotSupportedInThisDirection,
  OutsideRegime,
  InvalidArgument,
  UnknownField,
  SeedMissing,
  ConfigError,
};

inline constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::SumExceedsOne: return "SumExceedsOne";
    case ErrorCode::NonPositiveEntry: return "NonPositiveEntry";
    case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
    case ErrorCode::EmptyPartition: return "EmptyPartition";
    case ErrorCode::TrivialSplit: return "TrivialSplit";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::UnknownFamily: return "UnknownFamily";
    case ErrorCode::RateNotComputable: return "RateNotComputable";
    case ErrorCode::BelowPLower: return "BelowPLower";
    case ErrorCode::NotComputable: return "NotComputable";
    case ErrorCode::BracketNotFound: return "BracketNotFound";
    case ErrorCode::AmbiguousBracket: return "AmbiguousBracket";
    case ErrorCode::ModelNotFinite: return "ModelNotFinite";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::DustNotSupported: return "DustNotSupported";
    case ErrorCode::BarrierFlagsMissing: return "BarrierFlagsMissing";
    case ErrorCode::NonPositiveRate: return "NonPositiveRate";
    case ErrorCode::NegativePNotSupportedInThisDirection:
      return "NegativePNotSupportedInThisDirection";
    case ErrorCode::OutsideRegime: return "OutsideRegime";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownField: return "UnknownField";
    case ErrorCode::SeedMissing: return "SeedMissing";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace fragsim
