#pragma once

#include <stdexcept>
#include <string>

namespace fbe {

enum class ErrorCode {
  NonHermitian,
  DimensionMismatch,
  DegenerateObservables,
  NonCommuting,
  DimensionCap,
  Overflow,
  RankDeficient,
  BasisMismatch,
  NoConvergence,
  OutOfRange,
  SingularG,
  ZeroColdTemperature,
  NegativeColdTemperature,
  HullViolation,
  SignViolation,
  ScaleTooLarge,
  InvalidModel,
  NoClosedForm,
  InsufficientPoints,
  ConfigError,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonHermitian: return "NonHermitian";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateObservables: return "DegenerateObservables";
    case ErrorCode::NonCommuting: return "NonCommuting";
    case ErrorCode::DimensionCap: return "DimensionCap";
    case ErrorCode::Overflow: return "Overflow";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::BasisMismatch: return "BasisMismatch";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::SingularG: return "SingularG";
    case ErrorCode::ZeroColdTemperature: return "ZeroColdTemperature";
    case ErrorCode::NegativeColdTemperature: return "NegativeColdTemperature";
    case ErrorCode::HullViolation: return "HullViolation";
    case ErrorCode::SignViolation: return "SignViolation";
    case ErrorCode::ScaleTooLarge: return "ScaleTooLarge";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::NoClosedForm: return "NoClosedForm";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fbe
