#pragma once

#include <stdexcept>
#include <string>

namespace gapmm {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kUnsupported,
  kParse,
  kIo,
  kNotConverged,
  kInvariantViolation,
  kProjectionSingular,
  kSchemaMismatch,
};

const char* to_string(ErrorCode code);

/// Base exception type of the library; the code is what the C API reports.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const char* message) {
  if (!condition) fail(code, message);
}

}  // namespace gapmm
