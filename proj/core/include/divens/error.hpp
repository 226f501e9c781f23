#pragma once

#include <stdexcept>
#include <string>

namespace divens {

enum class ErrorCode {
  kInvalidArgument,  // bad configuration or call contract
  kShapeMismatch,    // tensor shapes disagree inside an operation
  kNumeric,          // NaN/Inf, singular matrices
  kIo,               // missing or unreadable file
  kFormat,           // malformed file contents (IDX, JSON)
  kVersion,          // unsupported checkpoint format_version
  kCheckpointShape,  // checkpoint arrays inconsistent with declared config
  kTheory,           // theory verification failed
};

const char* to_string(ErrorCode code);

/// Library-wide exception. `context` carries machine-readable detail
/// (shapes, offsets, offending indices) for the CLI's JSON error records.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string context = {})
      : std::runtime_error(message), code_(code), context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  ErrorCode code_;
  std::string context_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message, std::string context = {});

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::kInvalidArgument, message);
}

}  // namespace divens
