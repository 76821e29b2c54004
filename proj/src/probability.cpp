#include "foulseg/probability.hpp"

#include "foulseg/error.hpp"

namespace foulseg {

ProbabilityField ProbabilityField::one_hot(const SegmentationMask& mask) {
  ProbabilityField field(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      const auto v = mask.at(x, y);
      if (v >= kNumClasses) throw Error(ErrorCode::InvalidMask, "one-hot field requires a fully labeled mask");
      field.pixel(x, y)[v] = 1.0f;
    }
  return field;
}

ProbabilityField ProbabilityField::uniform(int w, int h) {
  ProbabilityField field(w, h);
  for (auto& p : field.probs) p = 1.0f / kNumClasses;
  return field;
}

SegmentationMask argmax_mask(const ProbabilityField& field) {
  SegmentationMask mask(field.width, field.height);
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      const auto px = field.pixel(x, y);
      int best = 0;
      for (int c = 1; c < kNumClasses; ++c)
        if (px[c] > px[best]) best = c;
      mask.at(x, y) = static_cast<std::uint8_t>(best);
    }
  return mask;
}

}  // namespace foulseg
