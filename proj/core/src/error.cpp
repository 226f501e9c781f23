#include "divens/error.hpp"

namespace divens {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kCheckpointShape: return "checkpoint_shape";
    case ErrorCode::kTheory: return "theory";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message, std::string context) {
  throw Error(code, message, std::move(context));
}

}  // namespace divens
