#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "foulseg/rng.hpp"
#include "foulseg/taxonomy.hpp"

namespace foulseg {

struct SamplingConfig {
  int points_per_image = 50;  // n
  int repetitions = 1000;     // N
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
  static SamplingConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Labels of the labeled pixels, in raster order; the population the points are drawn from.
std::vector<std::uint8_t> labeled_population(const SegmentationMask& mask);

/// n uniform draws with replacement over labeled pixels. Throws AllPixelsIgnored.
ClassDistribution sample_points(const SegmentationMask& mask, int n, Rng& rng);
ClassDistribution sample_points(const std::vector<std::uint8_t>& population, int n, Rng& rng);

/// Stream used for repetition `rep` of image `image`.
inline Rng sampling_stream(std::uint64_t seed, std::size_t image, int rep) {
  return Rng(derive_seed(seed, {static_cast<std::uint64_t>(image), static_cast<std::uint64_t>(rep)}));
}

struct ClassSamplingStats {
  double mae = 0, mae_se = 0;
  double mape = 0, mape_se = 0;
  double lop = 0, lop_se = 0;
  int n_images = 0;
  std::int64_t n_samples = 0;
};

struct SamplingTrial {
  int image = 0;
  int repetition = 0;
  std::array<std::uint16_t, kNumClasses> hits{};
};

struct SamplingReport {
  SamplingConfig config;
  std::vector<ClassDistribution> truth;  // p per image
  std::array<std::optional<ClassSamplingStats>, kNumClasses> classes;  // empty when I^c is empty
  std::vector<SamplingTrial> trials;  // filled only on request

  /// class,mae,mae_se,mape,mape_se,lop,lop_se,n_images,n_samples (absent classes omitted)
  void write_csv(const std::filesystem::path& path) const;
  /// image,repetition,class,p,p_hat
  void write_trials(const std::filesystem::path& path) const;
};

SamplingReport sampling_error_report(const std::vector<SegmentationMask>& masks, const SamplingConfig& config,
                                     bool keep_trials = false);

}  // namespace foulseg
