#include "foulseg/training/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "foulseg/config_util.hpp"
#include "foulseg/error.hpp"

namespace foulseg {

namespace {

constexpr std::array<std::pair<AugmentOp, std::string_view>, 9> kOpNames{{
    {AugmentOp::Flip, "flip"},
    {AugmentOp::Rotation, "rotation"},
    {AugmentOp::Grayscale, "grayscale"},
    {AugmentOp::Contrast, "contrast"},
    {AugmentOp::Hue, "hue"},
    {AugmentOp::Elastic, "elastic"},
    {AugmentOp::ClassDropout, "class_dropout"},
    {AugmentOp::CoarseDropout, "coarse_dropout"},
    {AugmentOp::Clahe, "clahe"},
}};

std::uint8_t saturate(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

double luma(const RgbImage& img, int x, int y) {
  return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
}

}  // namespace

std::string_view to_string(AugmentOp op) noexcept {
  for (const auto& [o, name] : kOpNames)
    if (o == op) return name;
  return "?";
}

AugmentOp parse_augment_op(std::string_view name) {
  for (const auto& [o, n] : kOpNames)
    if (n == name) return o;
  throw Error(ErrorCode::ConfigError, "augmentation: unknown op '" + std::string(name) + "'");
}

AugmentConfig AugmentConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"ops", "magnitude", "ops_per_sample"}, "augmentation");
  AugmentConfig c;
  std::vector<std::string> names;
  read_key(j, "ops", names, "augmentation");
  for (const auto& n : names) c.ops.push_back(parse_augment_op(n));
  read_key(j, "magnitude", c.magnitude, "augmentation");
  read_key(j, "ops_per_sample", c.ops_per_sample, "augmentation");
  if (c.magnitude < 0 || c.magnitude > kMaxMagnitude) {
    throw Error(ErrorCode::ConfigError, "augmentation.magnitude must be within 0..10");
  }
  if (c.ops_per_sample < 0) throw Error(ErrorCode::ConfigError, "augmentation.ops_per_sample must be >= 0");
  return c;
}

nlohmann::json AugmentConfig::to_json() const {
  std::vector<std::string> names;
  for (auto op : ops) names.emplace_back(to_string(op));
  return {{"ops", names}, {"magnitude", magnitude}, {"ops_per_sample", ops_per_sample}};
}

void flip(RgbImage& image, SegmentationMask& mask, bool horizontal) {
  const int w = image.width(), h = image.height();
  RgbImage out(w, h);
  SegmentationMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = horizontal ? w - 1 - x : x;
      const int sy = horizontal ? y : h - 1 - y;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(sx, sy, c);
      m.at(x, y) = mask.at(sx, sy);
    }
  image = std::move(out);
  mask = std::move(m);
}

void rotate90(RgbImage& image, SegmentationMask& mask, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return;
  const int w = image.width(), h = image.height();
  if (w != h && k != 2) throw Error(ErrorCode::InvalidGeometry, "quarter-turn rotation needs a square tile");
  RgbImage out(w, h);
  SegmentationMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sx = x, sy = y;
      if (k == 1) {
        sx = w - 1 - y;
        sy = x;
      } else if (k == 2) {
        sx = w - 1 - x;
        sy = h - 1 - y;
      } else {
        sx = y;
        sy = h - 1 - x;
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(sx, sy, c);
      m.at(x, y) = mask.at(sx, sy);
    }
  image = std::move(out);
  mask = std::move(m);
}

void grayscale(RgbImage& image, double strength) {
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const double l = luma(image, x, y);
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = saturate(image.at(x, y, c) + strength * (l - image.at(x, y, c)));
    }
}

void adjust_contrast(RgbImage& image, double factor) {
  double mean = 0.0;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) mean += luma(image, x, y);
  mean /= static_cast<double>(image.width()) * image.height();
  for (auto& v : image.data()) v = saturate(mean + factor * (v - mean));
}

void shift_hue(RgbImage& image, double shift) {
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const double r = image.at(x, y, 0) / 255.0, g = image.at(x, y, 1) / 255.0, b = image.at(x, y, 2) / 255.0;
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double d = mx - mn;
      if (d <= 0.0) continue;
      double hue;
      if (mx == r) {
        hue = std::fmod((g - b) / d, 6.0);
      } else if (mx == g) {
        hue = (b - r) / d + 2.0;
      } else {
        hue = (r - g) / d + 4.0;
      }
      hue = std::fmod(hue / 6.0 + shift + 2.0, 1.0) * 6.0;
      const double s = d / mx;
      const double v = mx;
      const int sector = static_cast<int>(hue) % 6;
      const double f = hue - std::floor(hue);
      const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
      std::array<double, 3> rgb;
      switch (sector) {
        case 0: rgb = {v, t, p}; break;
        case 1: rgb = {q, v, p}; break;
        case 2: rgb = {p, v, t}; break;
        case 3: rgb = {p, q, v}; break;
        case 4: rgb = {t, p, v}; break;
        default: rgb = {v, p, q}; break;
      }
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = saturate(rgb[static_cast<std::size_t>(c)] * 255.0);
    }
}

void elastic(RgbImage& image, SegmentationMask& mask, double amplitude, Rng& rng) {
  // Random displacements on a 5x5 control grid, bilinearly interpolated to a smooth field.
  constexpr int kGrid = 5;
  const int w = image.width(), h = image.height();
  std::array<double, kGrid * kGrid> gx{}, gy{};
  for (int i = 0; i < kGrid * kGrid; ++i) {
    gx[static_cast<std::size_t>(i)] = rng.uniform(-amplitude, amplitude);
    gy[static_cast<std::size_t>(i)] = rng.uniform(-amplitude, amplitude);
  }
  auto field = [&](const std::array<double, kGrid * kGrid>& g, double u, double v) {
    const int i0 = std::min(static_cast<int>(u), kGrid - 2), j0 = std::min(static_cast<int>(v), kGrid - 2);
    const double fu = u - i0, fv = v - j0;
    auto at = [&](int i, int j) { return g[static_cast<std::size_t>(j * kGrid + i)]; };
    return (1 - fv) * ((1 - fu) * at(i0, j0) + fu * at(i0 + 1, j0)) + fv * ((1 - fu) * at(i0, j0 + 1) + fu * at(i0 + 1, j0 + 1));
  };
  RgbImage out(w, h);
  SegmentationMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (kGrid - 1) * static_cast<double>(x) / std::max(1, w - 1);
      const double v = (kGrid - 1) * static_cast<double>(y) / std::max(1, h - 1);
      const double sx = std::clamp(x + field(gx, u, v), 0.0, w - 1.0);
      const double sy = std::clamp(y + field(gy, u, v), 0.0, h - 1.0);
      const int x0 = std::min(static_cast<int>(sx), w - 1), y0 = std::min(static_cast<int>(sy), h - 1);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - fx) * image.at(x0, y0, c) + fx * image.at(x1, y0, c);
        const double bottom = (1 - fx) * image.at(x0, y1, c) + fx * image.at(x1, y1, c);
        out.at(x, y, c) = saturate((1 - fy) * top + fy * bottom);
      }
      m.at(x, y) = mask.at(static_cast<int>(std::lround(sx)), static_cast<int>(std::lround(sy)));
    }
  image = std::move(out);
  mask = std::move(m);
}

int class_dropout(SegmentationMask& mask, Rng& rng) {
  const auto hist = class_histogram(mask);
  std::vector<int> present;
  for (int c = 0; c < kNumClasses; ++c)
    if (hist[static_cast<std::size_t>(c)] > 0) present.push_back(c);
  if (present.size() < 2) return -1;
  const int dropped = present[rng.below(present.size())];
  for (auto& v : mask.labels())
    if (v == dropped) v = kIgnoreId;
  return dropped;
}

void coarse_dropout(RgbImage& image, int holes, int max_size, Rng& rng) {
  const int w = image.width(), h = image.height();
  max_size = std::clamp(max_size, 1, std::min(w, h));
  for (int i = 0; i < holes; ++i) {
    const int hw = rng.range(1, max_size), hh = rng.range(1, max_size);
    const int x0 = rng.range(0, w - hw), y0 = rng.range(0, h - hh);
    for (int y = y0; y < y0 + hh; ++y)
      for (int x = x0; x < x0 + hw; ++x)
        for (int c = 0; c < 3; ++c) image.at(x, y, c) = 0;
  }
}

void clahe(RgbImage& image, double clip_limit, int grid) {
  const int w = image.width(), h = image.height();
  grid = std::clamp(grid, 1, std::min(w, h));
  std::vector<double> y(static_cast<std::size_t>(w) * h), cb(y.size()), cr(y.size());
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      const double r = image.at(px, py, 0), g = image.at(px, py, 1), b = image.at(px, py, 2);
      const auto i = static_cast<std::size_t>(py) * w + px;
      y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
      cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
      cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }

  // One clipped-histogram lookup table per tile.
  std::vector<std::array<double, 256>> luts(static_cast<std::size_t>(grid) * grid);
  for (int ty = 0; ty < grid; ++ty)
    for (int tx = 0; tx < grid; ++tx) {
      const int x0 = tx * w / grid, x1 = (tx + 1) * w / grid;
      const int y0 = ty * h / grid, y1 = (ty + 1) * h / grid;
      std::array<double, 256> hist{};
      for (int py = y0; py < y1; ++py)
        for (int px = x0; px < x1; ++px) {
          hist[static_cast<std::size_t>(std::clamp(std::lround(y[static_cast<std::size_t>(py) * w + px]), 0L, 255L))] += 1;
        }
      const double count = static_cast<double>(x1 - x0) * (y1 - y0);
      const double limit = std::max(1.0, clip_limit * count / 256.0);
      double excess = 0.0;
      for (auto& v : hist) {
        if (v > limit) {
          excess += v - limit;
          v = limit;
        }
      }
      auto& lut = luts[static_cast<std::size_t>(ty) * grid + tx];
      double cdf = 0.0;
      for (std::size_t b = 0; b < 256; ++b) {
        cdf += hist[b] + excess / 256.0;
        lut[b] = 255.0 * cdf / count;
      }
    }

  for (int py = 0; py < h; ++py) {
    const double gy = std::clamp((py + 0.5) * grid / h - 0.5, 0.0, grid - 1.0);
    const int ty0 = static_cast<int>(gy), ty1 = std::min(ty0 + 1, grid - 1);
    const double fy = gy - ty0;
    for (int px = 0; px < w; ++px) {
      const double gx = std::clamp((px + 0.5) * grid / w - 0.5, 0.0, grid - 1.0);
      const int tx0 = static_cast<int>(gx), tx1 = std::min(tx0 + 1, grid - 1);
      const double fx = gx - tx0;
      const auto i = static_cast<std::size_t>(py) * w + px;
      const auto bin = static_cast<std::size_t>(std::clamp(std::lround(y[i]), 0L, 255L));
      auto lut = [&](int tx, int ty) { return luts[static_cast<std::size_t>(ty) * grid + tx][bin]; };
      const double v = (1 - fy) * ((1 - fx) * lut(tx0, ty0) + fx * lut(tx1, ty0)) +
                       fy * ((1 - fx) * lut(tx0, ty1) + fx * lut(tx1, ty1));
      image.at(px, py, 0) = saturate(v + 1.402 * cr[i]);
      image.at(px, py, 1) = saturate(v - 0.344136 * cb[i] - 0.714136 * cr[i]);
      image.at(px, py, 2) = saturate(v + 1.772 * cb[i]);
    }
  }
}

void apply_augmentations(RgbImage& image, SegmentationMask& mask, const AugmentConfig& config, Rng& rng) {
  if (config.ops.empty() || config.ops_per_sample <= 0) return;
  if (image.width() != mask.width() || image.height() != mask.height()) {
    throw Error(ErrorCode::ShapeMismatch, "image and mask differ in size");
  }
  std::vector<AugmentOp> pool = config.ops;
  rng.shuffle(pool);
  pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(config.ops_per_sample)));
  const double m = static_cast<double>(config.magnitude) / kMaxMagnitude;
  const int side = std::min(image.width(), image.height());
  for (auto op : pool) {
    switch (op) {
      case AugmentOp::Flip:
        flip(image, mask, rng.bernoulli(0.5));
        break;
      case AugmentOp::Rotation:
        rotate90(image, mask, image.width() == image.height() ? rng.range(1, 3) : 2);
        break;
      case AugmentOp::Grayscale:
        grayscale(image, m);
        break;
      case AugmentOp::Contrast:
        adjust_contrast(image, 1.0 + rng.uniform(-0.5, 0.5) * m);
        break;
      case AugmentOp::Hue:
        shift_hue(image, rng.uniform(-0.1, 0.1) * m);
        break;
      case AugmentOp::Elastic:
        elastic(image, mask, 0.05 * side * m, rng);
        break;
      case AugmentOp::ClassDropout:
        class_dropout(mask, rng);
        break;
      case AugmentOp::CoarseDropout:
        coarse_dropout(image, 1 + config.magnitude / 2, std::max(1, static_cast<int>(0.25 * side * m)), rng);
        break;
      case AugmentOp::Clahe:
        clahe(image, 1.0 + 0.4 * config.magnitude, 4);
        break;
    }
  }
}

}  // namespace foulseg
