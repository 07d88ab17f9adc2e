#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace caustic {

enum class ErrorKind {
  AllBlackImage,
  HemisphereViolation,
  EmptySupport,
  DegenerateDirection,
  SingularWeight,
  DenominatorSign,
  NonPositiveWeight,
  DegeneratePair,
  InitialEmptyCell,
  BacktrackExhausted,
  IterationLimit,
  LinearSolveFailure,
  EmptyCell,
  EmptyCellMesh,
  NoIntersectionMesh,
  DimensionMismatch,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports carries a machine-readable kind; the CLI
// maps kinds to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace caustic
