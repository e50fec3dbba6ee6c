#pragma once

#include <stdexcept>
#include <string>

namespace owr {

// Failure classes. The CLI maps each to a distinct process exit code.
enum class ErrorKind {
  kInvalidInput,
  kConfig,
  kMissingArtifact,
  kBudgetExceeded,
  kNumerical,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid_input";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kMissingArtifact: return "missing_artifact";
    case ErrorKind::kBudgetExceeded: return "budget_exceeded";
    case ErrorKind::kNumerical: return "numerical";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

/// Exit-code contract: 0 success, 2 config, 3 missing artifact, 4 budget, 5 numerical.
/// Invalid data and I/O failures that are not a missing artifact exit with 1.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kMissingArtifact: return 3;
    case ErrorKind::kBudgetExceeded: return 4;
    case ErrorKind::kNumerical: return 5;
    case ErrorKind::kInvalidInput:
    case ErrorKind::kIo: return 1;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace owr
