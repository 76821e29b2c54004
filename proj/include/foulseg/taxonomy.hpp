#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace foulseg {

inline constexpr int kNumClasses = 10;
inline constexpr std::uint8_t kIgnoreId = 255;

/// Normative class ids. Every report indexes classes in this order.
enum class FoulingClass : std::uint8_t {
  Bare = 0,
  Slime = 1,
  Barnacle = 2,
  ArborescentBryozoan = 3,
  EncrustingBryozoan = 4,
  ColonialTunicate = 5,
  SolitaryTunicate = 6,
  CalcareousTubeworm = 7,
  Sponge = 8,
  Cnidaria = 9,
};

constexpr std::uint8_t id(FoulingClass c) noexcept { return static_cast<std::uint8_t>(c); }

struct ClassInfo {
  int id;
  std::string_view name;
  std::array<std::uint8_t, 3> color;  // display only
};

class ClassTaxonomy {
 public:
  static const ClassTaxonomy& standard();

  std::span<const ClassInfo> classes() const noexcept { return classes_; }
  std::uint8_t ignore_id() const noexcept { return kIgnoreId; }
  std::string_view name(int class_id) const;
  /// Accepts the canonical name or its snake_case form; returns -1 when unknown.
  int find(std::string_view name) const noexcept;

 private:
  ClassTaxonomy();
  std::array<ClassInfo, kNumClasses> classes_;
};

constexpr bool is_valid_label(std::uint8_t v) noexcept { return v < kNumClasses || v == kIgnoreId; }

/// Dense per-pixel class ids, row-major. Values are 0..9 or kIgnoreId.
class SegmentationMask {
 public:
  SegmentationMask() = default;
  SegmentationMask(int width, int height, std::uint8_t fill = 0);
  SegmentationMask(int width, int height, std::vector<std::uint8_t> labels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }
  std::size_t size() const noexcept { return labels_.size(); }

  std::uint8_t at(int x, int y) const { return labels_[index(x, y)]; }
  std::uint8_t& at(int x, int y) { return labels_[index(x, y)]; }

  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  std::span<std::uint8_t> labels() noexcept { return labels_; }

  /// Throws InvalidMask for zero dimensions and IllegalLabelValue for values outside {0..9, 255}.
  void validate() const;

  bool operator==(const SegmentationMask&) const = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> labels_;
};

using ClassHistogram = std::array<std::int64_t, kNumClasses>;

/// Fraction of labeled pixels per class.
struct ClassDistribution {
  std::array<double, kNumClasses> p{};

  double operator[](int c) const { return p[static_cast<std::size_t>(c)]; }
  double& operator[](int c) { return p[static_cast<std::size_t>(c)]; }
};

ClassHistogram class_histogram(const SegmentationMask& mask);
std::int64_t labeled_count(const ClassHistogram& h) noexcept;

/// Throws AllPixelsIgnored when the histogram is empty.
ClassDistribution distribution_from_histogram(const ClassHistogram& h);
ClassDistribution class_distribution(const SegmentationMask& mask);

}  // namespace foulseg
