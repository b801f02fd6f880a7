#pragma once

#include <stdexcept>
#include <string>

namespace exammon {

// Numeric values are part of the C ABI (exm_status) and must not be reordered.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 1,
  kIoFailure = 2,
  kEmptyInput = 3,
  kMalformedRecord = 4,
  kAllZeroLandmarks = 5,
  kWrongPointCount = 6,
  kOutOfRange = 7,
  kBadMetadata = 8,
  kDegenerateDiagonal = 9,
  kBadDims = 10,
  kDimMismatch = 11,
  kEmptyDataset = 12,
  kNonFiniteLoss = 13,
  kCorruptModel = 14,
  kInvalidRatio = 15,
  kBadSpec = 16,
  kSessionEnded = 17,
  kInvalidTransition = 18,
  kCorruptLog = 19,
  kModelLoadFailure = 20,
  kDuplicateRoom = 21,
  kAuthFailure = 22,
  kUnknownRoom = 23,
  kUnknownStudent = 24,
  kStaleSeq = 25,
  kConnectFailure = 26,
  kBadSchedule = 27,
  kInternal = 28,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace exammon
