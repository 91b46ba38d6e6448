#include "windcomfort/error.hpp"

namespace wc {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidScene: return "InvalidScene";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::UnsupportedAngle: return "UnsupportedAngle";
    case ErrorCode::CorruptContainer: return "CorruptContainer";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateWeight: return "DegenerateWeight";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::SpecMismatch: return "SpecMismatch";
    case ErrorCode::AllPixelsExcluded: return "AllPixelsExcluded";
    case ErrorCode::UnnormalizedRose: return "UnnormalizedRose";
    case ErrorCode::CriteriaShapeMismatch: return "CriteriaShapeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace wc
