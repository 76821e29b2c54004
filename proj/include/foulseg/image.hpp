#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "foulseg/taxonomy.hpp"

namespace foulseg {

/// 8-bit RGB raster, interleaved, row-major.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, std::uint8_t fill = 0);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  std::uint8_t at(int x, int y, int ch) const { return data_[offset(x, y) + static_cast<std::size_t>(ch)]; }
  std::uint8_t& at(int x, int y, int ch) { return data_[offset(x, y) + static_cast<std::size_t>(ch)]; }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

struct PanelImage {
  RgbImage pixels;
  std::string panel_id;
  std::string capture_date;  // ISO-8601
  std::string site;
};

/// Planar float image used by the resampling and filtering routines.
struct PlanarImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;  // channel-major

  PlanarImage() = default;
  PlanarImage(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

  float& at(int x, int y, int ch) { return data[(static_cast<std::size_t>(ch) * height + y) * width + x]; }
  float at(int x, int y, int ch) const { return data[(static_cast<std::size_t>(ch) * height + y) * width + x]; }
};

PlanarImage to_planar(const RgbImage& image);
/// Rounds to nearest and saturates to [0, 255].
RgbImage to_rgb(const PlanarImage& image);

RgbImage load_rgb(const std::filesystem::path& path);
void save_rgb(const RgbImage& image, const std::filesystem::path& path);

/// Reads an 8-bit single-channel (indexed or gray) raster; rejects values outside {0..9, 255}.
SegmentationMask load_mask(const std::filesystem::path& path);
/// Writes an indexed PNG carrying the display palette. Lossless.
void save_mask(const SegmentationMask& mask, const std::filesystem::path& path);

}  // namespace foulseg
