#include "foulseg/taxonomy.hpp"

#include <algorithm>
#include <cctype>

#include "foulseg/error.hpp"

namespace foulseg {

ClassTaxonomy::ClassTaxonomy()
    : classes_{{
          {0, "bare", {200, 200, 200}},
          {1, "slime", {140, 110, 60}},
          {2, "barnacle", {240, 240, 230}},
          {3, "arborescent bryozoan", {180, 60, 40}},
          {4, "encrusting bryozoan", {230, 150, 40}},
          {5, "colonial tunicate", {120, 40, 140}},
          {6, "solitary tunicate", {60, 160, 80}},
          {7, "calcareous tubeworm", {250, 240, 120}},
          {8, "sponge", {230, 90, 150}},
          {9, "cnidaria", {60, 100, 200}},
      }} {}

const ClassTaxonomy& ClassTaxonomy::standard() {
  static const ClassTaxonomy taxonomy;
  return taxonomy;
}

std::string_view ClassTaxonomy::name(int class_id) const {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw Error(ErrorCode::InvalidConfig, "class id out of range: " + std::to_string(class_id));
  }
  return classes_[static_cast<std::size_t>(class_id)].name;
}

int ClassTaxonomy::find(std::string_view name) const noexcept {
  auto normalize = [](std::string_view s) {
    std::string out;
    for (char ch : s) out.push_back(ch == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    return out;
  };
  const std::string key = normalize(name);
  for (const auto& info : classes_) {
    if (normalize(info.name) == key) return info.id;
  }
  return -1;
}

SegmentationMask::SegmentationMask(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  if (width < 0 || height < 0) throw Error(ErrorCode::InvalidMask, "negative mask dimensions");
  labels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

SegmentationMask::SegmentationMask(int width, int height, std::vector<std::uint8_t> labels)
    : width_(width), height_(height), labels_(std::move(labels)) {
  if (width < 0 || height < 0 ||
      labels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::InvalidMask, "label buffer does not match mask dimensions");
  }
}

void SegmentationMask::validate() const {
  if (width_ <= 0 || height_ <= 0) {
    throw Error(ErrorCode::InvalidMask,
                "mask dimensions must be positive, got " + std::to_string(width_) + "x" + std::to_string(height_));
  }
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const auto v = at(x, y);
      if (!is_valid_label(v)) throw IllegalLabelValue(v, x, y);
    }
  }
}

ClassHistogram class_histogram(const SegmentationMask& mask) {
  ClassHistogram h{};
  for (auto v : mask.labels()) {
    if (v < kNumClasses) ++h[v];
  }
  return h;
}

std::int64_t labeled_count(const ClassHistogram& h) noexcept {
  std::int64_t total = 0;
  for (auto n : h) total += n;
  return total;
}

ClassDistribution distribution_from_histogram(const ClassHistogram& h) {
  const auto total = labeled_count(h);
  if (total == 0) throw Error(ErrorCode::AllPixelsIgnored, "no labeled pixels");
  ClassDistribution d;
  for (int c = 0; c < kNumClasses; ++c) d[c] = static_cast<double>(h[static_cast<std::size_t>(c)]) / static_cast<double>(total);
  return d;
}

ClassDistribution class_distribution(const SegmentationMask& mask) {
  return distribution_from_histogram(class_histogram(mask));
}

}  // namespace foulseg
