#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "foulseg/taxonomy.hpp"

namespace foulseg {

/// Per-pixel class probabilities, pixel-major: probs[(y * width + x) * 10 + c].
struct ProbabilityField {
  int width = 0;
  int height = 0;
  std::vector<float> probs;

  ProbabilityField() = default;
  ProbabilityField(int w, int h) : width(w), height(h), probs(static_cast<std::size_t>(w) * h * kNumClasses, 0.0f) {}

  std::span<float> pixel(int x, int y) {
    return {probs.data() + (static_cast<std::size_t>(y) * width + x) * kNumClasses, kNumClasses};
  }
  std::span<const float> pixel(int x, int y) const {
    return {probs.data() + (static_cast<std::size_t>(y) * width + x) * kNumClasses, kNumClasses};
  }

  static ProbabilityField one_hot(const SegmentationMask& mask);
  static ProbabilityField uniform(int w, int h);
};

/// Argmax per pixel; ties resolve to the lowest class id.
SegmentationMask argmax_mask(const ProbabilityField& field);

}  // namespace foulseg
