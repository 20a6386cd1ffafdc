#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segfuse {

// Machine-readable error category. The service maps these 1:1 onto its
// wire codes; the CLI maps every one of them to exit status 1.
enum class ErrorCode {
  kFormat,
  kValidation,
  kDimensionMismatch,
  kInvalidArgument,
  kNotFound,
  kConflict,
  kPreconditionFailed,
  kGone,
  kIo,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kPreconditionFailed: return "precondition_failed";
    case ErrorCode::kGone: return "gone";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace segfuse
