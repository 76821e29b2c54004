#include "foulseg/error.hpp"

namespace foulseg {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::IllegalLabelValue: return "IllegalLabelValue";
    case ErrorCode::InvalidMask: return "InvalidMask";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::AllPixelsIgnored: return "AllPixelsIgnored";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::TargetSizeUnset: return "TargetSizeUnset";
    case ErrorCode::InvalidGeometry: return "InvalidGeometry";
    case ErrorCode::NonDivisibleDimensions: return "NonDivisibleDimensions";
    case ErrorCode::CoverageGap: return "CoverageGap";
    case ErrorCode::InfeasibleFraction: return "InfeasibleFraction";
    case ErrorCode::EmptyDistribution: return "EmptyDistribution";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NoLabeledPixels: return "NoLabeledPixels";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::EmptyImageSet: return "EmptyImageSet";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateDate: return "DuplicateDate";
    case ErrorCode::SingleFrame: return "SingleFrame";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::StageDependencyMissing: return "StageDependencyMissing";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

IllegalLabelValue::IllegalLabelValue(int value, int x, int y)
    : Error(ErrorCode::IllegalLabelValue,
            "value " + std::to_string(value) + " at (" + std::to_string(x) + ", " +
                std::to_string(y) + ")"),
      value_(value),
      x_(x),
      y_(y) {}

CoverageGap::CoverageGap(int x, int y)
    : Error(ErrorCode::CoverageGap,
            "pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") not covered by any tile"),
      x_(x),
      y_(y) {}

}  // namespace foulseg
