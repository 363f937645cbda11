#pragma once

#include <stdexcept>
#include <string>

namespace kepsvgp {

enum class ErrorKind {
  ShapeMismatch,
  NotPositiveDefinite,
  ConvergenceFailure,
  NonFiniteValue,
  NonFiniteObjective,
  NonFiniteLoss,
  SingularSystem,
  EigenMismatch,
  FixedLengthViolation,
  VocabularyOverflow,
  LabelOutOfRange,
  InvalidConfig,
  ParseError,
  RaggedRows,
  EmptyDump,
  NonBinaryLabels,
  DegenerateLabels,
  EmptySet,
  ZeroMatrix,
  CheckpointMismatch,
  IoError,
};

/// Library-wide exception carrying a machine-checkable kind next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace kepsvgp
