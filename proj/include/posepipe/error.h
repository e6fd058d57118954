#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace posepipe {

enum class ErrorCode {
  kNonPositiveDepth,
  kNearPiAmbiguity,
  kDegenerateConfig,
  kParseError,
  kIndexOutOfRange,
  kEmptyBlock,
  kOutOfOrderFrame,
  kMissingSnapshot,
  kSolverDiverged,
  kInsufficientConstraints,
  kLinearSolveFailure,
  kNonFiniteResidual,
  kEmptyMeasurements,
  kDisconnectedBlock,
  kTooFewFrames,
  kIoError,
  kInvalidArgument,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures surface as this exception. The code is stable and is
// what callers should branch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace posepipe
