#ifndef XMANIP_ERROR_H_
#define XMANIP_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmanip {

enum class ErrorCode {
  // Configuration problems.
  kInvalidArgument,
  kConfig,
  // Data problems.
  kIo,
  kMissingColumn,
  kNonBinaryOutcome,
  kMalformedRow,
  kZeroVariance,
  kNoSensitiveColumn,
  kDimensionMismatch,
  kEmptyClass,
  kEmptyList,
  kEmptyGroup,
  kEmptyGroupBatch,
  // Numerical failures.
  kSingularSystem,
  kConvergenceFailure,
  kCgNoConvergence,
  kNotConverged,
  kNonFinite,
};

enum class ErrorCategory { kConfig, kData, kNumeric };

std::string_view error_code_name(ErrorCode code);
ErrorCategory error_category(ErrorCode code);

// All library failures are reported as Error. `code()` identifies the
// failure kind; `row()` is set for MalformedRow.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, long row = -1)
      : std::runtime_error(message), code_(code), row_(row) {}

  ErrorCode code() const { return code_; }
  long row() const { return row_; }

 private:
  ErrorCode code_;
  long row_;
};

// Throws kDimensionMismatch unless `actual == expected`.
void check_dim(std::size_t actual, std::size_t expected, std::string_view what);

}  // namespace xmanip

#endif  // XMANIP_ERROR_H_
