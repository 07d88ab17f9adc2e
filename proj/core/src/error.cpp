#include "caustic/error.hpp"

namespace caustic {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::AllBlackImage: return "AllBlackImage";
    case ErrorKind::HemisphereViolation: return "HemisphereViolation";
    case ErrorKind::EmptySupport: return "EmptySupport";
    case ErrorKind::DegenerateDirection: return "DegenerateDirection";
    case ErrorKind::SingularWeight: return "SingularWeight";
    case ErrorKind::DenominatorSign: return "DenominatorSign";
    case ErrorKind::NonPositiveWeight: return "NonPositiveWeight";
    case ErrorKind::DegeneratePair: return "DegeneratePair";
    case ErrorKind::InitialEmptyCell: return "InitialEmptyCell";
    case ErrorKind::BacktrackExhausted: return "BacktrackExhausted";
    case ErrorKind::IterationLimit: return "IterationLimit";
    case ErrorKind::LinearSolveFailure: return "LinearSolveFailure";
    case ErrorKind::EmptyCell: return "EmptyCell";
    case ErrorKind::EmptyCellMesh: return "EmptyCellMesh";
    case ErrorKind::NoIntersectionMesh: return "NoIntersectionMesh";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace caustic
