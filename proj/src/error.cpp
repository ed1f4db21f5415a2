#include "vgcdm/error.hpp"

namespace vgcdm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kIndexOutOfRange: return "index out of range";
    case ErrorCode::kInsufficientData: return "insufficient data";
    case ErrorCode::kMissingManifest: return "missing manifest";
    case ErrorCode::kMalformedManifest: return "malformed manifest";
    case ErrorCode::kPayloadMismatch: return "payload mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kUndefinedMetric: return "undefined metric";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kDiverged: return "diverged training";
    case ErrorCode::kUnsupported: return "unsupported operation";
    case ErrorCode::kCheckpointFormat: return "checkpoint format";
  }
  return "error";
}

}  // namespace vgcdm
