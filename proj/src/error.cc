#include "posepipe/error.h"

namespace posepipe {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonPositiveDepth:
      return "NonPositiveDepth";
    case ErrorCode::kNearPiAmbiguity:
      return "NearPiAmbiguity";
    case ErrorCode::kDegenerateConfig:
      return "DegenerateConfig";
    case ErrorCode::kParseError:
      return "ParseError";
    case ErrorCode::kIndexOutOfRange:
      return "IndexOutOfRange";
    case ErrorCode::kEmptyBlock:
      return "EmptyBlock";
    case ErrorCode::kOutOfOrderFrame:
      return "OutOfOrderFrame";
    case ErrorCode::kMissingSnapshot:
      return "MissingSnapshot";
    case ErrorCode::kSolverDiverged:
      return "SolverDiverged";
    case ErrorCode::kInsufficientConstraints:
      return "InsufficientConstraints";
    case ErrorCode::kLinearSolveFailure:
      return "LinearSolveFailure";
    case ErrorCode::kNonFiniteResidual:
      return "NonFiniteResidual";
    case ErrorCode::kEmptyMeasurements:
      return "EmptyMeasurements";
    case ErrorCode::kDisconnectedBlock:
      return "DisconnectedBlock";
    case ErrorCode::kTooFewFrames:
      return "TooFewFrames";
    case ErrorCode::kIoError:
      return "IoError";
    case ErrorCode::kInvalidArgument:
      return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

}  // namespace posepipe
