#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace radeval {

// Stable error codes; these strings go on the wire as the "code" field.
enum class ErrorCode {
  kIo,
  kSchema,
  kDuplicate,
  kInvalidArgument,
  kDegenerate,
  kInsufficient,
  kOutOfVocabulary,
  kUnknownTask,
  kUnassignedRater,
  kConflict,
  kValidation,
  kInfeasible,
  kUnauthorized,
  kNotFound,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kSchema: return "schema_violation";
    case ErrorCode::kDuplicate: return "duplicate";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kInsufficient: return "insufficient";
    case ErrorCode::kOutOfVocabulary: return "out_of_vocabulary";
    case ErrorCode::kUnknownTask: return "unknown_task";
    case ErrorCode::kUnassignedRater: return "unassigned_rater";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kValidation: return "validation_failed";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kUnauthorized: return "unauthorized";
    case ErrorCode::kNotFound: return "not_found";
  }
  return "unknown";
}

// The single exception type thrown by the library. `field` names the
// offending input field when there is one, so callers can build
// field-level error responses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string field = {})
      : std::runtime_error(std::move(message)), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace radeval
