#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"
#include "foulseg/pipeline.hpp"

using namespace foulseg;
namespace fs = std::filesystem;

namespace {

nlohmann::json small_config(const fs::path& out) {
  auto j = nlohmann::json::parse(R"({
    "seed": 3,
    "preprocess": {"crop_top_frac": 0, "crop_bottom_frac": 0, "crop_left_frac": 0, "crop_right_frac": 0,
                   "target_small": [192, 160], "format": "small", "contrast_cutoff": 0, "unsharp_amount": 0,
                   "tile_size": 128, "overlap": 32, "downsample": 2},
    "curation": {"val_fraction": 0.25, "ga": {"generations": 10, "population": 10}},
    "network": {"encoder": "tiny"},
    "training": {"max_epochs_per_phase": 1, "patience_epochs": 1, "batch_size": 8, "phase2_unfreeze_stages": 1},
    "active_learning": {"selection": {"K": 4, "k": 2}, "projection": {"iterations": 100, "perplexity": 3}},
    "sampling": {"repetitions": 20},
    "synthetic": {"scene": {"preset": "standard", "width": 192, "height": 160}, "panels": 1, "frames": 2}
  })");
  j["paths"] = {{"output_root", out.string()}};
  return j;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoFailure;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("pipeline config validation") {
  CHECK(code_of([] { PipelineConfig::from_json({{"unknown", 1}}); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { PipelineConfig::from_json({{"training", {{"bogus", 1}}}}); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { PipelineConfig::from_json({{"network", {{"encoder", "tiny"}}}}); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { PipelineConfig::from_json({{"curation", {{"val_fraction", 1.5}}}}); }) == ErrorCode::ConfigError);
  const auto cfg = PipelineConfig::from_json(small_config("x"));
  CHECK(cfg.network.input_size == 64);
  CHECK(PipelineConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}

TEST_CASE("stages refuse to run before their inputs exist") {
  const auto out = fs::temp_directory_path() / "foulseg_pipeline_empty";
  fs::remove_all(out);
  const auto cfg = PipelineConfig::from_json(small_config(out));
  for (const char* s : {"predict", "train", "split", "tile", "metrics", "select", "layers", "preprocess"})
    CHECK(code_of([&] { run_stage(s, cfg); }) == ErrorCode::StageDependencyMissing);
  CHECK(code_of([&] { run_stage("nope", cfg); }) == ErrorCode::ConfigError);
}

TEST_CASE("synthetic pipeline end to end is deterministic") {
  const auto out = fs::temp_directory_path() / "foulseg_pipeline_run";
  fs::remove_all(out);
  const auto cfg = PipelineConfig::from_json(small_config(out));
  StageOptions opt;
  opt.pool = "all";
  for (const auto& s : stage_names()) run_stage(s, cfg, opt);

  for (const char* f : {"synth/panels.csv", "tile/tiles.csv", "split/manifest.csv", "oversample/plan.csv",
                        "train/model.fsck", "train/training_log.csv", "predict/tile_predictions.csv",
                        "metrics/metrics.csv", "embed/embeddings.csv", "select/selection.txt",
                        "project/projection.csv", "simulate-points/report.csv", "layers/P000/transitions.csv"})
    CHECK(fs::exists(out / f));
  CHECK(csv::read(out / "tile/tiles.csv").rows.size() == 8);  // 2 frames x 2 x 2 tiles

  const auto first = slurp(out / "metrics/metrics.csv") + slurp(out / "project/projection.csv") +
                     slurp(out / "simulate-points/report.csv") + slurp(out / "layers/P000/transitions.csv");
  for (const auto& s : stage_names()) run_stage(s, cfg, opt);
  const auto second = slurp(out / "metrics/metrics.csv") + slurp(out / "project/projection.csv") +
                      slurp(out / "simulate-points/report.csv") + slurp(out / "layers/P000/transitions.csv");
  CHECK(first == second);
}
