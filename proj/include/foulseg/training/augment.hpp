#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "foulseg/image.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/taxonomy.hpp"

namespace foulseg {

enum class AugmentOp { Flip, Rotation, Grayscale, Contrast, Hue, Elastic, ClassDropout, CoarseDropout, Clahe };

std::string_view to_string(AugmentOp op) noexcept;
AugmentOp parse_augment_op(std::string_view name);

/// RandAugment-style policy: per sample, `ops_per_sample` distinct ops are drawn from
/// `ops` and applied at the global `magnitude` (0..10).
struct AugmentConfig {
  std::vector<AugmentOp> ops;
  int magnitude = 5;
  int ops_per_sample = 2;

  static AugmentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline constexpr int kMaxMagnitude = 10;

void apply_augmentations(RgbImage& image, SegmentationMask& mask, const AugmentConfig& config, Rng& rng);

// Individual ops, exposed for tests. Geometric ops act on both image and mask.
void flip(RgbImage& image, SegmentationMask& mask, bool horizontal);
/// Rotation by k quarter turns counter-clockwise; non-square inputs only accept k = 2.
void rotate90(RgbImage& image, SegmentationMask& mask, int k);
void grayscale(RgbImage& image, double strength);
void adjust_contrast(RgbImage& image, double factor);
/// Hue rotation by `shift` turns (1.0 = full circle).
void shift_hue(RgbImage& image, double shift);
void elastic(RgbImage& image, SegmentationMask& mask, double amplitude, Rng& rng);
/// Sets every pixel of one randomly chosen present class to ignore; no-op with fewer than two classes.
/// Returns the dropped class or -1.
int class_dropout(SegmentationMask& mask, Rng& rng);
void coarse_dropout(RgbImage& image, int holes, int max_size, Rng& rng);
/// Contrast limited adaptive histogram equalization of the luma channel on a grid x grid tiling.
void clahe(RgbImage& image, double clip_limit, int grid);

}  // namespace foulseg
