#include "gapmm/error.hpp"

namespace gapmm {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kNotConverged: return "not converged";
    case ErrorCode::kInvariantViolation: return "invariant violation";
    case ErrorCode::kProjectionSingular: return "projection singular";
    case ErrorCode::kSchemaMismatch: return "schema mismatch";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace gapmm
