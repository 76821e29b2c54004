#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "foulseg/error.hpp"
#include "foulseg/pipeline.hpp"

namespace {

int report_error(const std::string& stage, const std::string& code, const std::string& message) {
  nlohmann::json j{{"status", "error"}, {"stage", stage}, {"code", code}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return code == "ConfigError" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"foulseg: macrofouling segmentation pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string output_root, data_root;
  foulseg::StageOptions options;
  std::string checkpoint;

  app.add_option("-c,--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the master seed");
  app.add_option("-j,--jobs", jobs, "worker cap")->check(CLI::PositiveNumber);
  app.add_option("--output-root", output_root, "override paths.output_root");
  app.add_option("--data-root", data_root, "override paths.data_root");

  const std::map<std::string, std::string> help = {
      {"synth", "generate synthetic panel series with ground-truth ledgers"},
      {"preprocess", "crop, resize, contrast-stretch and sharpen panels"},
      {"tile", "cut overlapping tiles and downsample them"},
      {"manifest", "build the tile manifest with class histograms"},
      {"synth-overlap", "add tiles assembled from 2x2 labeled neighbours"},
      {"split", "evolutionary train/validation split"},
      {"oversample", "class-weighted oversampling plan"},
      {"train", "two-phase training"},
      {"predict", "predict validation tiles and stitch full panels"},
      {"metrics", "per-class and mean metrics on the validation tiles"},
      {"embed", "uncertainty and bottleneck embeddings for a tile pool"},
      {"select", "pick the next annotation batch"},
      {"project", "PCA + t-SNE projection of the embeddings"},
      {"simulate-points", "random-point annotation error simulation"},
      {"layers", "layer model, direct surface attachment and succession export"},
  };
  for (const auto& name : foulseg::stage_names()) {
    auto* sub = app.add_subcommand(name, help.at(name));
    if (name == "predict" || name == "embed") {
      sub->add_option("--checkpoint", checkpoint, "model checkpoint (default: <output_root>/train/model.fsck)");
    }
    if (name == "embed") sub->add_option("--pool", options.pool, "tile pool")->check(CLI::IsMember({"unassigned", "val", "train", "all"}));
    if (name == "simulate-points") sub->add_flag("--trials", options.dump_trials, "write every trial to trials.csv");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("", "ConfigError", e.what());
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    auto cfg = config_path.empty() ? foulseg::PipelineConfig::from_json(nlohmann::json::object())
                                   : foulseg::PipelineConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (!output_root.empty()) cfg.output_root = output_root;
    if (!data_root.empty()) cfg.data_root = data_root;
    options.checkpoint = checkpoint;
    foulseg::run_stage(stage, cfg, options);
  } catch (const foulseg::Error& e) {
    return report_error(stage, std::string(foulseg::to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    return report_error(stage, "Internal", e.what());
  }
  return 0;
}
