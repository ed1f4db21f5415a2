#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vgcdm {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kConfig,
  kIndexOutOfRange,
  kInsufficientData,
  kMissingManifest,
  kMalformedManifest,
  kPayloadMismatch,
  kNonFinite,
  kIo,
  kUndefinedMetric,
  kEmptyInput,
  kDiverged,
  kUnsupported,
  kCheckpointFormat,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised when training produces a non-finite loss.
class DivergedError : public Error {
 public:
  DivergedError(int epoch, long long step, const std::string& what)
      : Error(ErrorCode::kDiverged, what), epoch_(epoch), step_(step) {}

  int epoch() const noexcept { return epoch_; }
  long long step() const noexcept { return step_; }

 private:
  int epoch_;
  long long step_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace vgcdm
