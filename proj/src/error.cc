#include "xmanip/error.h"

#include <string>

namespace xmanip {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kNonBinaryOutcome: return "NonBinaryOutcome";
    case ErrorCode::kMalformedRow: return "MalformedRow";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kNoSensitiveColumn: return "NoSensitiveColumn";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kEmptyList: return "EmptyList";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kEmptyGroupBatch: return "EmptyGroupBatch";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::kCgNoConvergence: return "CgNoConvergence";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kNonFinite: return "NonFinite";
  }
  return "Unknown";
}

ErrorCategory error_category(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfig:
      return ErrorCategory::kConfig;
    case ErrorCode::kSingularSystem:
    case ErrorCode::kConvergenceFailure:
    case ErrorCode::kCgNoConvergence:
    case ErrorCode::kNotConverged:
    case ErrorCode::kNonFinite:
      return ErrorCategory::kNumeric;
    default:
      return ErrorCategory::kData;
  }
}

void check_dim(std::size_t actual, std::size_t expected, std::string_view what) {
  if (actual != expected) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": expected dimension " +
                    std::to_string(expected) + ", got " + std::to_string(actual));
  }
}

}  // namespace xmanip
