#include "core/errors.hpp"

namespace exammon {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kAllZeroLandmarks: return "AllZeroLandmarks";
    case ErrorCode::kWrongPointCount: return "WrongPointCount";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kBadMetadata: return "BadMetadata";
    case ErrorCode::kDegenerateDiagonal: return "DegenerateDiagonal";
    case ErrorCode::kBadDims: return "BadDims";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kCorruptModel: return "CorruptModel";
    case ErrorCode::kInvalidRatio: return "InvalidRatio";
    case ErrorCode::kBadSpec: return "BadSpec";
    case ErrorCode::kSessionEnded: return "SessionEnded";
    case ErrorCode::kInvalidTransition: return "InvalidTransition";
    case ErrorCode::kCorruptLog: return "CorruptLog";
    case ErrorCode::kModelLoadFailure: return "ModelLoadFailure";
    case ErrorCode::kDuplicateRoom: return "DuplicateRoom";
    case ErrorCode::kAuthFailure: return "AuthFailure";
    case ErrorCode::kUnknownRoom: return "UnknownRoom";
    case ErrorCode::kUnknownStudent: return "UnknownStudent";
    case ErrorCode::kStaleSeq: return "StaleSeq";
    case ErrorCode::kConnectFailure: return "ConnectFailure";
    case ErrorCode::kBadSchedule: return "BadSchedule";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

}  // namespace exammon
