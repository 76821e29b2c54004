#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace foulseg {

enum class ErrorCode {
  MissingFile,
  IllegalLabelValue,
  InvalidMask,
  IoFailure,
  AllPixelsIgnored,
  UnreadableImage,
  TargetSizeUnset,
  InvalidGeometry,
  NonDivisibleDimensions,
  CoverageGap,
  InfeasibleFraction,
  EmptyDistribution,
  InvalidConfig,
  ShapeMismatch,
  NoLabeledPixels,
  EmptySplit,
  DivergedLoss,
  LengthMismatch,
  PoolTooSmall,
  DegenerateInput,
  EmptyImageSet,
  DimensionMismatch,
  DuplicateDate,
  SingleFrame,
  ConfigError,
  StageDependencyMissing,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries a stable, machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class IllegalLabelValue : public Error {
 public:
  IllegalLabelValue(int value, int x, int y);

  int value() const noexcept { return value_; }
  int x() const noexcept { return x_; }
  int y() const noexcept { return y_; }

 private:
  int value_;
  int x_;
  int y_;
};

class CoverageGap : public Error {
 public:
  CoverageGap(int x, int y);

  int x() const noexcept { return x_; }
  int y() const noexcept { return y_; }

 private:
  int x_;
  int y_;
};

}  // namespace foulseg
