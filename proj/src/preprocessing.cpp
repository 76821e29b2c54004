#include "foulseg/preprocessing.hpp"

#include <algorithm>
#include <cmath>

#include "foulseg/config_util.hpp"
#include "foulseg/error.hpp"

namespace foulseg {

PreprocessConfig PreprocessConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"crop_top_frac", "crop_bottom_frac", "crop_left_frac", "crop_right_frac", "target_small",
                      "target_large", "contrast_cutoff", "unsharp_radius", "unsharp_amount", "tile_size", "overlap",
                      "downsample", "format"},
                     "preprocess");
  PreprocessConfig c;
  constexpr std::string_view s = "preprocess";
  read_key(j, "crop_top_frac", c.crop_top_frac, s);
  read_key(j, "crop_bottom_frac", c.crop_bottom_frac, s);
  read_key(j, "crop_left_frac", c.crop_left_frac, s);
  read_key(j, "crop_right_frac", c.crop_right_frac, s);
  read_key(j, "target_small", c.target_small, s);
  read_key(j, "target_large", c.target_large, s);
  read_key(j, "contrast_cutoff", c.contrast_cutoff, s);
  read_key(j, "unsharp_radius", c.unsharp_radius, s);
  read_key(j, "unsharp_amount", c.unsharp_amount, s);
  read_key(j, "tile_size", c.tile_size, s);
  read_key(j, "overlap", c.overlap, s);
  read_key(j, "downsample", c.downsample, s);
  if (j.contains("format")) {
    const auto f = j.at("format").get<std::string>();
    if (f == "small") c.format = PanelFormat::Small;
    else if (f == "large") c.format = PanelFormat::Large;
    else if (f == "auto") c.format = PanelFormat::Auto;
    else throw Error(ErrorCode::ConfigError, "preprocess.format must be small, large or auto");
  }
  if (c.contrast_cutoff < 0.0 || c.contrast_cutoff >= 0.5) {
    throw Error(ErrorCode::ConfigError, "preprocess.contrast_cutoff must lie in [0, 0.5)");
  }
  if (c.tile_size <= c.overlap || c.overlap < 0 || c.downsample < 1) {
    throw Error(ErrorCode::ConfigError, "preprocess: require tile_size > overlap >= 0 and downsample >= 1");
  }
  return c;
}

nlohmann::json PreprocessConfig::to_json() const {
  nlohmann::json j = {{"crop_top_frac", crop_top_frac},     {"crop_bottom_frac", crop_bottom_frac},
                      {"crop_left_frac", crop_left_frac},   {"crop_right_frac", crop_right_frac},
                      {"target_small", target_small},       {"target_large", target_large},
                      {"contrast_cutoff", contrast_cutoff}, {"unsharp_radius", unsharp_radius},
                      {"unsharp_amount", unsharp_amount},   {"tile_size", tile_size},
                      {"overlap", overlap},                 {"downsample", downsample}};
  if (format) j["format"] = *format == PanelFormat::Small ? "small" : *format == PanelFormat::Large ? "large" : "auto";
  return j;
}

CropBox border_crop_box(int width, int height, const PreprocessConfig& config) {
  CropBox box{};
  box.x0 = static_cast<int>(std::lround(config.crop_left_frac * width));
  box.x1 = width - static_cast<int>(std::lround(config.crop_right_frac * width));
  box.y0 = static_cast<int>(std::lround(config.crop_top_frac * height));
  box.y1 = height - static_cast<int>(std::lround(config.crop_bottom_frac * height));
  if (box.width() <= 0 || box.height() <= 0) {
    throw Error(ErrorCode::InvalidGeometry, "border crop removes the whole image");
  }
  return box;
}

std::array<int, 2> target_size(int width, int height, const PreprocessConfig& config) {
  if (!config.format) throw Error(ErrorCode::TargetSizeUnset, "panel format (small/large/auto) not configured");
  switch (*config.format) {
    case PanelFormat::Small: return config.target_small;
    case PanelFormat::Large: return config.target_large;
    case PanelFormat::Auto: break;
  }
  const double aspect = static_cast<double>(width) / height;
  auto distance = [aspect](const std::array<int, 2>& t) {
    return std::abs(std::log(aspect * t[1] / static_cast<double>(t[0])));
  };
  return distance(config.target_small) <= distance(config.target_large) ? config.target_small : config.target_large;
}

PlanarImage crop(const PlanarImage& image, const CropBox& box) {
  PlanarImage out(box.width(), box.height(), image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(x, y, c) = image.at(box.x0 + x, box.y0 + y, c);
  return out;
}

SegmentationMask crop(const SegmentationMask& mask, const CropBox& box) {
  SegmentationMask out(box.width(), box.height());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.at(x, y) = mask.at(box.x0 + x, box.y0 + y);
  return out;
}

namespace {

float cubic_weight(float t) {
  constexpr float a = -0.5f;
  t = std::abs(t);
  if (t <= 1.0f) return ((a + 2.0f) * t - (a + 3.0f)) * t * t + 1.0f;
  if (t < 2.0f) return ((a * t - 5.0f * a) * t + 8.0f * a) * t - 4.0f * a;
  return 0.0f;
}

struct Taps {
  std::array<int, 4> index;
  std::array<float, 4> weight;
};

std::vector<Taps> cubic_taps(int src, int dst) {
  std::vector<Taps> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double center = (i + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(center));
    const auto frac = static_cast<float>(center - base);
    auto& t = taps[static_cast<std::size_t>(i)];
    for (int k = 0; k < 4; ++k) {
      t.index[static_cast<std::size_t>(k)] = std::clamp(base - 1 + k, 0, src - 1);
      t.weight[static_cast<std::size_t>(k)] = cubic_weight(frac - static_cast<float>(k - 1));
    }
  }
  return taps;
}

}  // namespace

PlanarImage resize_bicubic(const PlanarImage& image, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidGeometry, "resize target must be positive");
  if (width == image.width && height == image.height) return image;
  const auto xt = cubic_taps(image.width, width);
  const auto yt = cubic_taps(image.height, height);
  PlanarImage horizontal(width, image.height, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < width; ++x) {
        const auto& t = xt[static_cast<std::size_t>(x)];
        float acc = 0.0f;
        for (std::size_t k = 0; k < 4; ++k) acc += t.weight[k] * image.at(t.index[k], y, c);
        horizontal.at(x, y, c) = acc;
      }
  PlanarImage out(width, height, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < height; ++y) {
      const auto& t = yt[static_cast<std::size_t>(y)];
      for (int x = 0; x < width; ++x) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < 4; ++k) acc += t.weight[k] * horizontal.at(x, t.index[k], c);
        out.at(x, y, c) = acc;
      }
    }
  return out;
}

SegmentationMask resize_nearest(const SegmentationMask& mask, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidGeometry, "resize target must be positive");
  SegmentationMask out(width, height);
  for (int y = 0; y < height; ++y) {
    const auto sy = static_cast<int>((2LL * y + 1) * mask.height() / (2LL * height));
    for (int x = 0; x < width; ++x) {
      const auto sx = static_cast<int>((2LL * x + 1) * mask.width() / (2LL * width));
      out.at(x, y) = mask.at(sx, sy);
    }
  }
  return out;
}

void contrast_stretch(PlanarImage& image, double cutoff) {
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  if (plane == 0) return;
  std::vector<float> sorted(plane);
  for (int c = 0; c < image.channels; ++c) {
    auto first = image.data.begin() + static_cast<std::ptrdiff_t>(c * plane);
    std::copy(first, first + static_cast<std::ptrdiff_t>(plane), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    const auto lo_index = static_cast<std::size_t>(std::floor(cutoff * static_cast<double>(plane)));
    const auto hi_index = std::min(plane - 1, static_cast<std::size_t>(std::ceil((1.0 - cutoff) * static_cast<double>(plane))) - 1);
    const float lo = sorted[std::min(lo_index, plane - 1)];
    const float hi = sorted[std::max(hi_index, lo_index)];
    if (!(hi > lo)) continue;
    const float gain = 255.0f / (hi - lo);
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(plane); ++it) {
      *it = std::clamp((*it - lo) * gain, 0.0f, 255.0f);
    }
  }
}

void unsharp_mask(PlanarImage& image, int radius, double amount) {
  if (radius <= 0 || amount == 0.0) return;
  const double sigma = radius;
  const int half = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> kernel(static_cast<std::size_t>(2 * half + 1));
  double norm = 0.0;
  for (int k = -half; k <= half; ++k) {
    const double w = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + half)] = static_cast<float>(w);
    norm += w;
  }
  for (auto& w : kernel) w = static_cast<float>(w / norm);

  const int w = image.width;
  const int h = image.height;
  PlanarImage tmp(w, h, 1);
  PlanarImage blur(w, h, 1);
  const auto a = static_cast<float>(amount);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -half; k <= half; ++k) acc += kernel[static_cast<std::size_t>(k + half)] * image.at(std::clamp(x + k, 0, w - 1), y, c);
        tmp.at(x, y, 0) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -half; k <= half; ++k) acc += kernel[static_cast<std::size_t>(k + half)] * tmp.at(x, std::clamp(y + k, 0, h - 1), 0);
        blur.at(x, y, 0) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float v = image.at(x, y, c);
        image.at(x, y, c) = std::clamp(v + a * (v - blur.at(x, y, 0)), 0.0f, 255.0f);
      }
  }
}

PanelImage preprocess_panel(const PanelImage& raw, const PreprocessConfig& config) {
  if (raw.pixels.empty()) throw Error(ErrorCode::UnreadableImage, "empty panel image '" + raw.panel_id + "'");
  const auto box = border_crop_box(raw.pixels.width(), raw.pixels.height(), config);
  const auto target = target_size(box.width(), box.height(), config);
  PlanarImage image = resize_bicubic(crop(to_planar(raw.pixels), box), target[0], target[1]);
  contrast_stretch(image, config.contrast_cutoff);
  unsharp_mask(image, config.unsharp_radius, config.unsharp_amount);
  PanelImage out = raw;
  out.pixels = to_rgb(image);
  return out;
}

SegmentationMask preprocess_mask(const SegmentationMask& mask, const PreprocessConfig& config) {
  const auto box = border_crop_box(mask.width(), mask.height(), config);
  const auto target = target_size(box.width(), box.height(), config);
  return resize_nearest(crop(mask, box), target[0], target[1]);
}

std::vector<int> tile_offsets(int extent, int tile_size, int overlap) {
  if (tile_size <= overlap || overlap < 0 || extent <= 0) {
    throw Error(ErrorCode::InvalidGeometry, "require tile_size > overlap >= 0 and a positive extent");
  }
  if (extent <= tile_size) return {0};
  const int stride = tile_size - overlap;
  std::vector<int> offsets;
  for (int pos = 0; pos + tile_size < extent; pos += stride) offsets.push_back(pos);
  offsets.push_back(extent - tile_size);
  return offsets;
}

namespace {

// Mirror index without repeating the edge sample; valid for any offset.
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename Raster, typename CutFn>
auto tile_generic(const Raster& panel, int width, int height, int tile_size, int overlap, CutFn cut) {
  std::vector<std::pair<TileGeometry, Raster>> tiles;
  const auto xs = tile_offsets(width, tile_size, overlap);
  const auto ys = tile_offsets(height, tile_size, overlap);
  for (int y : ys)
    for (int x : xs) {
      TileGeometry g{x, y, tile_size};
      tiles.emplace_back(g, cut(panel, g));
    }
  return tiles;
}

}  // namespace

RgbImage cut_tile(const RgbImage& panel, const TileGeometry& g) {
  RgbImage tile(g.size, g.size);
  for (int y = 0; y < g.size; ++y)
    for (int x = 0; x < g.size; ++x)
      for (int c = 0; c < 3; ++c)
        tile.at(x, y, c) = panel.at(reflect(g.x + x, panel.width()), reflect(g.y + y, panel.height()), c);
  return tile;
}

SegmentationMask cut_tile(const SegmentationMask& panel, const TileGeometry& g) {
  SegmentationMask tile(g.size, g.size);
  for (int y = 0; y < g.size; ++y)
    for (int x = 0; x < g.size; ++x)
      tile.at(x, y) = panel.at(reflect(g.x + x, panel.width()), reflect(g.y + y, panel.height()));
  return tile;
}

std::vector<std::pair<TileGeometry, RgbImage>> tile_panel(const RgbImage& panel, int tile_size, int overlap) {
  return tile_generic(panel, panel.width(), panel.height(), tile_size, overlap,
                      [](const RgbImage& p, const TileGeometry& g) { return cut_tile(p, g); });
}

std::vector<std::pair<TileGeometry, SegmentationMask>> tile_panel(const SegmentationMask& panel, int tile_size,
                                                                  int overlap) {
  return tile_generic(panel, panel.width(), panel.height(), tile_size, overlap,
                      [](const SegmentationMask& p, const TileGeometry& g) { return cut_tile(p, g); });
}

RgbImage downsample(const RgbImage& tile, int factor) {
  if (factor < 1) throw Error(ErrorCode::InvalidGeometry, "downsample factor must be >= 1");
  if (tile.width() % factor != 0 || tile.height() % factor != 0) {
    throw Error(ErrorCode::NonDivisibleDimensions, "tile dimensions not divisible by " + std::to_string(factor));
  }
  if (factor == 1) return tile;
  RgbImage out(tile.width() / factor, tile.height() / factor);
  const int area = factor * factor;
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) sum += tile.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = static_cast<std::uint8_t>((sum + area / 2) / area);
      }
  return out;
}

SegmentationMask downsample(const SegmentationMask& tile, int factor) {
  if (factor < 1) throw Error(ErrorCode::InvalidGeometry, "downsample factor must be >= 1");
  if (tile.width() % factor != 0 || tile.height() % factor != 0) {
    throw Error(ErrorCode::NonDivisibleDimensions, "tile dimensions not divisible by " + std::to_string(factor));
  }
  if (factor == 1) return tile;
  SegmentationMask out(tile.width() / factor, tile.height() / factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out.at(x, y) = tile.at(x * factor, y * factor);
  return out;
}

ProbabilityField upsample(const ProbabilityField& field, int factor) {
  if (factor < 1) throw Error(ErrorCode::InvalidGeometry, "upsample factor must be >= 1");
  if (factor == 1) return field;
  ProbabilityField out(field.width * factor, field.height * factor);
  for (int y = 0; y < out.height; ++y) {
    const double sy = std::clamp((y + 0.5) / factor - 0.5, 0.0, static_cast<double>(field.height - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, field.height - 1);
    const auto fy = static_cast<float>(sy - y0);
    for (int x = 0; x < out.width; ++x) {
      const double sx = std::clamp((x + 0.5) / factor - 0.5, 0.0, static_cast<double>(field.width - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, field.width - 1);
      const auto fx = static_cast<float>(sx - x0);
      auto dst = out.pixel(x, y);
      const auto a = field.pixel(x0, y0), b = field.pixel(x1, y0), c = field.pixel(x0, y1), d = field.pixel(x1, y1);
      for (int k = 0; k < kNumClasses; ++k) {
        dst[k] = (1 - fy) * ((1 - fx) * a[k] + fx * b[k]) + fy * ((1 - fx) * c[k] + fx * d[k]);
      }
    }
  }
  return out;
}

std::pair<ProbabilityField, SegmentationMask> stitch_probabilities(
    const std::vector<std::pair<TileGeometry, ProbabilityField>>& tiles, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidGeometry, "panel size must be positive");
  std::vector<double> sum(static_cast<std::size_t>(width) * height * kNumClasses, 0.0);
  std::vector<int> count(static_cast<std::size_t>(width) * height, 0);
  for (const auto& [g, field] : tiles) {
    if (field.width != g.size || field.height != g.size) {
      throw Error(ErrorCode::InvalidGeometry, "probability field does not match its tile geometry");
    }
    for (int ty = 0; ty < g.size; ++ty) {
      const int y = g.y + ty;
      if (y < 0 || y >= height) continue;
      for (int tx = 0; tx < g.size; ++tx) {
        const int x = g.x + tx;
        if (x < 0 || x >= width) continue;
        const auto idx = static_cast<std::size_t>(y) * width + x;
        ++count[idx];
        const auto src = field.pixel(tx, ty);
        for (int c = 0; c < kNumClasses; ++c) sum[idx * kNumClasses + static_cast<std::size_t>(c)] += src[c];
      }
    }
  }
  ProbabilityField out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto idx = static_cast<std::size_t>(y) * width + x;
      if (count[idx] == 0) throw CoverageGap(x, y);
      auto dst = out.pixel(x, y);
      for (int c = 0; c < kNumClasses; ++c) {
        dst[c] = static_cast<float>(sum[idx * kNumClasses + static_cast<std::size_t>(c)] / count[idx]);
      }
    }
  auto mask = argmax_mask(out);
  return {std::move(out), std::move(mask)};
}

}  // namespace foulseg
