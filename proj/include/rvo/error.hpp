#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rvo {

enum class ErrorCode {
  DegenerateBaseline,
  InsufficientMatches,
  NoConvergence,
  InsufficientParallax,
  DegenerateConfiguration,
  NoConsensus,
  InvalidScenario,
  FrozenMap,
  DanglingReference,
  OutOfOrderKeyFrame,
  RecoveryFailure,
  FusionFailure,
  InsufficientOverlap,
  ParseError,
  NonOrthonormalRotation,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::InsufficientParallax: return "InsufficientParallax";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::InvalidScenario: return "InvalidScenario";
    case ErrorCode::FrozenMap: return "FrozenMap";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::OutOfOrderKeyFrame: return "OutOfOrderKeyFrame";
    case ErrorCode::RecoveryFailure: return "RecoveryFailure";
    case ErrorCode::FusionFailure: return "FusionFailure";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NonOrthonormalRotation: return "NonOrthonormalRotation";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rvo
