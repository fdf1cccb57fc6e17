#pragma once

#include <stdexcept>
#include <string>

namespace fedpcl {

enum class ErrorKind {
  kShape,
  kParameter,
  kBatchSize,
  kMode,
  kMissingClass,
  kDegenerateLoss,
  kDegenerateBatch,
  kLabel,
  kEmptySet,
  kCoverage,
  kConfig,
  kFormat,
  kEmptyDataset,
  kPartitionInfeasible,
  kNumerical,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kBatchSize: return "batch-size error";
    case ErrorKind::kMode: return "mode error";
    case ErrorKind::kMissingClass: return "missing-class error";
    case ErrorKind::kDegenerateLoss: return "degenerate-loss error";
    case ErrorKind::kDegenerateBatch: return "degenerate-batch error";
    case ErrorKind::kLabel: return "label error";
    case ErrorKind::kEmptySet: return "empty-set error";
    case ErrorKind::kCoverage: return "coverage error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kEmptyDataset: return "empty-dataset error";
    case ErrorKind::kPartitionInfeasible: return "partition-infeasible error";
    case ErrorKind::kNumerical: return "numerical error";
  }
  return "error";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit codes: 2 config, 3 data, 4 runtime numerical.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kParameter:
      return 2;
    case ErrorKind::kFormat:
    case ErrorKind::kEmptyDataset:
    case ErrorKind::kPartitionInfeasible:
    case ErrorKind::kLabel:
    case ErrorKind::kCoverage:
    case ErrorKind::kMissingClass:
    case ErrorKind::kEmptySet:
      return 3;
    default:
      return 4;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace fedpcl
