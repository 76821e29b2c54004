#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "foulseg/taxonomy.hpp"

namespace foulseg {

struct ClassCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  bool operator==(const ClassCounts&) const = default;
};

struct ClassMetrics {
  double accuracy = 0.0;
  double iou = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Undefined ratios (zero denominators) are reported as 0.
ClassMetrics metrics_from_counts(const ClassCounts& k);

using ConfusionMatrix = std::array<std::array<std::int64_t, kNumClasses>, kNumClasses>;  // [truth][prediction]

struct MetricsReport {
  /// Per-tile counts; a class counts for a tile when it appears in that tile's truth or prediction.
  std::vector<std::array<ClassCounts, kNumClasses>> tile_counts;
  std::vector<std::array<bool, kNumClasses>> tile_present;

  std::array<std::optional<ClassMetrics>, kNumClasses> per_class;  // mean over counting tiles
  std::array<int, kNumClasses> counting_tiles{};
  ClassMetrics mean;  // unweighted over classes with a value

  std::array<std::optional<ClassMetrics>, kNumClasses> pooled;  // from pixel counts over all tiles
  ClassMetrics pooled_mean;
  double pixel_accuracy = 0.0;

  ConfusionMatrix confusion{};

  std::array<std::array<double, kNumClasses>, kNumClasses> row_normalized() const;

  nlohmann::json to_json() const;
  /// metrics.json, metrics.csv (per class + mean rows), confusion.csv, confusion_normalized.csv.
  void write(const std::filesystem::path& dir) const;
};

/// Ignore pixels (in either mask) are excluded everywhere.
MetricsReport evaluate_metrics(std::span<const SegmentationMask> predictions, std::span<const SegmentationMask> truths);

}  // namespace foulseg
