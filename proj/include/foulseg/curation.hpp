#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "foulseg/preprocessing.hpp"
#include "foulseg/taxonomy.hpp"

namespace foulseg {

enum class TileOrigin { Random, Expert, Active, Synthetic };
enum class Split { Train, Val, Unassigned };

std::string_view to_string(TileOrigin o) noexcept;
std::string_view to_string(Split s) noexcept;
TileOrigin parse_origin(std::string_view s);
Split parse_split(std::string_view s);

struct TileRecord {
  std::string tile_id;
  std::string panel_id;
  TileGeometry geometry;  // panel coordinates, before downsampling
  std::filesystem::path image_path;
  std::filesystem::path mask_path;  // empty for unlabeled pool tiles
  TileOrigin origin = TileOrigin::Random;
  ClassHistogram histogram{};
  Split split = Split::Unassigned;

  bool labeled() const noexcept { return !mask_path.empty(); }
};

struct DatasetManifest {
  std::vector<TileRecord> records;

  /// Duplicate ids throw InvalidConfig; with check_files, missing files throw MissingFile.
  void validate(bool check_files) const;
  const TileRecord& find(std::string_view tile_id) const;

  /// Columns: tile_id, panel_id, x, y, size, image_path, mask_path, origin, split, h0..h9.
  /// Relative paths are resolved against the manifest's directory on read and written verbatim.
  static DatasetManifest read_csv(const std::filesystem::path& path);
  void write_csv(const std::filesystem::path& path) const;
};

/// One tile per complete 2x2 block of grid-adjacent labeled tiles, centred on the block's common corner.
/// Image and mask are composed from the four source tiles and written under `out_dir`.
std::vector<TileRecord> synthesize_overlap_tiles(const DatasetManifest& manifest,
                                                 const std::filesystem::path& out_dir);
/// Geometry-only part of the above.
std::vector<std::pair<std::string, TileGeometry>> overlap_tile_geometries(const DatasetManifest& manifest);

inline constexpr double kKlEpsilon = 1e-8;

/// D(p || q) = sum_c p_c ln((p_c + eps) / (q_c + eps)).
double kl_divergence(const ClassDistribution& p, const ClassDistribution& q);

struct GaConfig {
  int population = 50;
  int generations = 500;
  int tournament_size = 3;
  int elitism = 1;
  double mutation_probability = 0.2;

  static GaConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  double kl = 0.0;
  double initial_best_kl = 0.0;
  std::vector<double> best_kl_per_generation;  // index 0 = initial population
  std::uint64_t seed = 0;
};

/// Only random/expert tiles compete for validation slots; active and synthetic tiles are train-only.
SplitAssignment evolutionary_split(const DatasetManifest& manifest, double val_fraction, const GaConfig& ga,
                                   std::uint64_t seed);
void apply_split(DatasetManifest& manifest, const SplitAssignment& split);
/// Pooled class distribution of all tiles in `split`.
ClassDistribution pooled_distribution(const DatasetManifest& manifest, Split split);

using ClassWeights = std::array<std::optional<double>, kNumClasses>;

/// w_c = max(p) / p_c lower-bounded by one; absent classes get no weight.
ClassWeights class_weights(const ClassDistribution& train_dist);

struct OversamplingPlan {
  ClassWeights weights{};
  std::vector<std::pair<std::string, int>> extra_counts;  // (tile_id, n_i)
  std::vector<double> scores;
  double alpha = 2.0;
  double mean_score = 0.0;
  int num_tiles = 0;

  void write(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) const;
  static OversamplingPlan read(const std::filesystem::path& csv_path, const std::filesystem::path& json_path);
};

/// score_i = sum_c p_{c,i} w_c; n_i = max(ceil(score_i - mean(score) - alpha), 0).
OversamplingPlan oversample_counts(const std::vector<TileRecord>& train_tiles, const ClassWeights& weights,
                                   double alpha);

}  // namespace foulseg
