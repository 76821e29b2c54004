#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "foulseg/image.hpp"
#include "foulseg/probability.hpp"
#include "foulseg/taxonomy.hpp"

namespace foulseg {

enum class PanelFormat { Small, Large, Auto };

struct PreprocessConfig {
  double crop_top_frac = 0.125;
  double crop_bottom_frac = 0.125;
  double crop_left_frac = 0.01;
  double crop_right_frac = 0.01;
  std::array<int, 2> target_small{1472, 2752};  // width, height
  std::array<int, 2> target_large{3008, 2752};
  double contrast_cutoff = 0.25;  // fraction discarded from each histogram tail
  int unsharp_radius = 1;
  double unsharp_amount = 1.0;
  int tile_size = 384;
  int overlap = 64;
  int downsample = 2;
  /// Unset means the caller must choose; Auto picks the target with the closest aspect ratio.
  std::optional<PanelFormat> format;

  static PreprocessConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct CropBox {
  int x0, y0, x1, y1;  // half-open
  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
};

CropBox border_crop_box(int width, int height, const PreprocessConfig& config);
std::array<int, 2> target_size(int width, int height, const PreprocessConfig& config);

PlanarImage crop(const PlanarImage& image, const CropBox& box);
SegmentationMask crop(const SegmentationMask& mask, const CropBox& box);

/// Keys cubic convolution (a = -0.5), half-pixel centers, clamped borders.
PlanarImage resize_bicubic(const PlanarImage& image, int width, int height);
SegmentationMask resize_nearest(const SegmentationMask& mask, int width, int height);

/// Per-channel linear stretch between the cutoff and 1 - cutoff quantiles.
/// Channels with a degenerate histogram are left unchanged.
void contrast_stretch(PlanarImage& image, double cutoff);
/// out = in + amount * (in - gaussian(in, sigma = radius)), saturated to [0, 255].
void unsharp_mask(PlanarImage& image, int radius, double amount);

/// Border crop, resize to the panel format target, contrast stretch, unsharp mask.
PanelImage preprocess_panel(const PanelImage& raw, const PreprocessConfig& config);
/// Geometric part only (crop + nearest resize) so a mask stays aligned with its preprocessed panel.
SegmentationMask preprocess_mask(const SegmentationMask& mask, const PreprocessConfig& config);

struct TileGeometry {
  int x = 0;
  int y = 0;
  int size = 0;

  bool operator==(const TileGeometry&) const = default;
};

/// Grid offsets 0, stride, 2*stride, ... with the last tile flush against the far edge.
std::vector<int> tile_offsets(int extent, int tile_size, int overlap);

std::vector<std::pair<TileGeometry, RgbImage>> tile_panel(const RgbImage& panel, int tile_size, int overlap);
std::vector<std::pair<TileGeometry, SegmentationMask>> tile_panel(const SegmentationMask& panel, int tile_size,
                                                                  int overlap);

RgbImage cut_tile(const RgbImage& panel, const TileGeometry& g);
SegmentationMask cut_tile(const SegmentationMask& panel, const TileGeometry& g);

/// Area averaging for images, top-left nearest neighbour for masks.
RgbImage downsample(const RgbImage& tile, int factor);
SegmentationMask downsample(const SegmentationMask& tile, int factor);
/// Bilinear enlargement of a probability field by an integer factor (inverse of downsample).
ProbabilityField upsample(const ProbabilityField& field, int factor);

/// Mean of all covering tiles per pixel, then argmax with lowest-id tie break.
std::pair<ProbabilityField, SegmentationMask> stitch_probabilities(
    const std::vector<std::pair<TileGeometry, ProbabilityField>>& tiles, int width, int height);

}  // namespace foulseg
