#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "foulseg/active_learning.hpp"
#include "foulseg/curation.hpp"
#include "foulseg/point_sampling.hpp"
#include "foulseg/preprocessing.hpp"
#include "foulseg/segnet/network.hpp"
#include "foulseg/synthetic.hpp"
#include "foulseg/training/trainer.hpp"

namespace foulseg {

struct CurationConfig {
  double val_fraction = 0.2;
  GaConfig ga;
  double alpha = 2.0;
  bool synthesize_overlap = false;
};

struct SuccessionConfig {
  double threshold = 0.01;
  bool reset_on_bare = false;
};

struct SyntheticRunConfig {
  SceneConfig scene = SceneConfig::standard();
  int panels = 4;
  int frames = 1;
};

struct PipelineConfig {
  std::filesystem::path data_root;  // holds panels.csv; empty means use the synth stage output
  std::filesystem::path output_root = "foulseg_out";
  std::uint64_t seed = 0;
  int jobs = 1;
  PreprocessConfig preprocess;
  CurationConfig curation;
  nn::NetworkConfig network;
  TrainConfig training;
  SelectionConfig selection;
  ProjectionConfig projection;
  SamplingConfig sampling;
  SuccessionConfig succession;
  SyntheticRunConfig synthetic;

  /// Rejects unknown keys with ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::filesystem::path stage_dir(std::string_view stage) const { return output_root / std::string(stage); }
};

/// One row of a panel index (panels.csv); paths are relative to the index file.
struct PanelEntry {
  std::string panel_id;
  std::string date;
  std::string site;
  std::filesystem::path image;
  std::filesystem::path mask;  // may be empty

  /// File-name safe key for one capture.
  std::string key() const;
};

std::vector<PanelEntry> read_panel_index(const std::filesystem::path& path);
void write_panel_index(const std::filesystem::path& path, const std::vector<PanelEntry>& panels);

struct StageOptions {
  std::string pool = "unassigned";  // embed: unassigned, val, train or all
  bool dump_trials = false;         // simulate-points
  std::filesystem::path checkpoint;  // predict/embed override
};

const std::vector<std::string>& stage_names();

/// Runs one stage; throws StageDependencyMissing when an upstream artifact is absent.
void run_stage(std::string_view stage, const PipelineConfig& config, const StageOptions& options = {});

}  // namespace foulseg
