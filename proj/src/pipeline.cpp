#include "foulseg/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"
#include "foulseg/image.hpp"
#include "foulseg/probability.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/segnet/checkpoint.hpp"
#include "foulseg/succession.hpp"
#include "foulseg/training/metrics.hpp"

namespace foulseg {

namespace fs = std::filesystem;

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"paths", "seed", "jobs", "preprocess", "curation", "network", "training", "active_learning",
                      "sampling", "succession", "synthetic"},
                     "config");
  PipelineConfig c;
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    require_known_keys(p, {"data_root", "output_root"}, "paths");
    std::string data_root, output_root = c.output_root.string();
    read_key(p, "data_root", data_root, "paths");
    read_key(p, "output_root", output_root, "paths");
    c.data_root = data_root;
    c.output_root = output_root;
  }
  read_key(j, "seed", c.seed, "config");
  read_key(j, "jobs", c.jobs, "config");
  if (c.jobs < 1) throw Error(ErrorCode::ConfigError, "jobs must be >= 1");
  if (j.contains("preprocess")) c.preprocess = PreprocessConfig::from_json(j.at("preprocess"));
  if (j.contains("curation")) {
    const auto& cu = j.at("curation");
    require_known_keys(cu, {"val_fraction", "ga", "alpha", "synthesize_overlap"}, "curation");
    read_key(cu, "val_fraction", c.curation.val_fraction, "curation");
    read_key(cu, "alpha", c.curation.alpha, "curation");
    read_key(cu, "synthesize_overlap", c.curation.synthesize_overlap, "curation");
    if (cu.contains("ga")) c.curation.ga = GaConfig::from_json(cu.at("ga"));
    if (!(c.curation.val_fraction > 0 && c.curation.val_fraction < 1)) {
      throw Error(ErrorCode::ConfigError, "curation.val_fraction must lie in (0, 1)");
    }
    if (c.curation.alpha < 0) throw Error(ErrorCode::ConfigError, "curation.alpha must be >= 0");
  }
  if (j.contains("network")) c.network = nn::NetworkConfig::from_json(j.at("network"));
  if (j.contains("training")) c.training = TrainConfig::from_json(j.at("training"));
  if (j.contains("active_learning")) {
    const auto& al = j.at("active_learning");
    require_known_keys(al, {"selection", "projection"}, "active_learning");
    if (al.contains("selection")) c.selection = SelectionConfig::from_json(al.at("selection"));
    if (al.contains("projection")) c.projection = ProjectionConfig::from_json(al.at("projection"));
  }
  if (j.contains("sampling")) c.sampling = SamplingConfig::from_json(j.at("sampling"));
  if (j.contains("succession")) {
    const auto& s = j.at("succession");
    require_known_keys(s, {"threshold", "reset_on_bare"}, "succession");
    read_key(s, "threshold", c.succession.threshold, "succession");
    read_key(s, "reset_on_bare", c.succession.reset_on_bare, "succession");
    if (c.succession.threshold < 0 || c.succession.threshold >= 1) {
      throw Error(ErrorCode::ConfigError, "succession.threshold must lie in [0, 1)");
    }
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    require_known_keys(s, {"scene", "panels", "frames"}, "synthetic");
    if (s.contains("scene")) c.synthetic.scene = SceneConfig::from_json(s.at("scene"));
    read_key(s, "panels", c.synthetic.panels, "synthetic");
    read_key(s, "frames", c.synthetic.frames, "synthetic");
    if (c.synthetic.panels < 1 || c.synthetic.frames < 1) {
      throw Error(ErrorCode::ConfigError, "synthetic.panels and synthetic.frames must be >= 1");
    }
  }
  const int expected_input = c.preprocess.tile_size / c.preprocess.downsample;
  if (c.preprocess.tile_size % c.preprocess.downsample != 0 || expected_input != c.network.input_size) {
    throw Error(ErrorCode::ConfigError, "network.input_size must equal preprocess.tile_size / preprocess.downsample (" +
                                            std::to_string(expected_input) + ")");
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) { return from_json(read_json(path)); }

nlohmann::json PipelineConfig::to_json() const {
  return {{"paths", {{"data_root", data_root.generic_string()}, {"output_root", output_root.generic_string()}}},
          {"seed", seed},
          {"jobs", jobs},
          {"preprocess", preprocess.to_json()},
          {"curation",
           {{"val_fraction", curation.val_fraction},
            {"ga", curation.ga.to_json()},
            {"alpha", curation.alpha},
            {"synthesize_overlap", curation.synthesize_overlap}}},
          {"network", network.to_json()},
          {"training", training.to_json()},
          {"active_learning", {{"selection", selection.to_json()}, {"projection", projection.to_json()}}},
          {"sampling", sampling.to_json()},
          {"succession", {{"threshold", succession.threshold}, {"reset_on_bare", succession.reset_on_bare}}},
          {"synthetic", {{"scene", synthetic.scene.to_json()}, {"panels", synthetic.panels}, {"frames", synthetic.frames}}}};
}

std::string PanelEntry::key() const {
  std::string d;
  for (char ch : date)
    if (ch != '-') d += ch;
  return d.empty() ? panel_id : panel_id + "_" + d;
}

std::vector<PanelEntry> read_panel_index(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  const auto table = csv::read(path);
  const auto base = path.parent_path();
  auto resolve = [&base](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    fs::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<PanelEntry> out;
  for (const auto& row : table.rows) {
    out.push_back({table.get(row, "panel_id"), table.get(row, "date"), table.get(row, "site"),
                   resolve(table.get(row, "image")), resolve(table.get(row, "mask"))});
  }
  return out;
}

void write_panel_index(const fs::path& path, const std::vector<PanelEntry>& panels) {
  const auto base = path.parent_path();
  auto relative = [&base](const fs::path& p) -> std::string {
    if (p.empty()) return {};
    return base.empty() ? p.generic_string() : fs::proximate(p, base).generic_string();
  };
  csv::Table t;
  t.header = {"panel_id", "date", "site", "image", "mask"};
  for (const auto& p : panels) t.rows.push_back({p.panel_id, p.date, p.site, relative(p.image), relative(p.mask)});
  csv::write(path, t);
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "synth", "preprocess", "tile",   "manifest", "synth-overlap", "split",           "oversample", "train",
      "predict", "metrics",  "embed",  "select",   "project",       "simulate-points", "layers"};
  return names;
}

namespace {

void log(std::string_view stage, const std::string& message) {
  std::cerr << "[" << stage << "] " << message << '\n';
}

void require(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::StageDependencyMissing,
                path.generic_string() + " not found; run '" + std::string(producer) + "' first");
  }
}

fs::path fresh_stage_dir(const PipelineConfig& cfg, std::string_view stage, std::initializer_list<const char*> subdirs = {}) {
  const auto dir = cfg.stage_dir(stage);
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir, ec);
  for (const char* s : subdirs) fs::create_directories(dir / s, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string());
  return dir;
}

std::uint64_t stage_seed(const PipelineConfig& cfg, std::string_view stage) {
  return derive_seed(cfg.seed, {hash_string(stage)});
}

fs::path input_index(const PipelineConfig& cfg) {
  if (!cfg.data_root.empty()) {
    const auto p = cfg.data_root / "panels.csv";
    if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, p.string());
    return p;
  }
  const auto p = cfg.stage_dir("synth") / "panels.csv";
  require(p, "synth");
  return p;
}

fs::path split_manifest(const PipelineConfig& cfg) {
  const auto p = cfg.stage_dir("split") / "manifest.csv";
  require(p, "split");
  return p;
}

std::unique_ptr<nn::SegNet<float>> load_model(const PipelineConfig& cfg, const StageOptions& opt) {
  const auto path = opt.checkpoint.empty() ? cfg.stage_dir("train") / "model.fsck" : opt.checkpoint;
  require(path, "train");
  return nn::load_network<float>(path);
}

// Softmax fields for a list of tiles, batched.
std::vector<ProbabilityField> predict_fields(nn::SegNet<float>& net, const std::vector<RgbImage>& tiles, int batch) {
  std::vector<ProbabilityField> out;
  const int size = net.config().input_size;
  for (std::size_t start = 0; start < tiles.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(tiles.size(), start + static_cast<std::size_t>(batch));
    nn::Tensor<float> t(static_cast<int>(end - start), 3, size, size);
    for (std::size_t i = start; i < end; ++i) nn::write_image(t, static_cast<int>(i - start), tiles[i]);
    const auto logits = net.forward(t, false);
    for (int s = 0; s < logits.n; ++s) out.push_back(nn::softmax_field(logits, s));
  }
  return out;
}

std::vector<std::vector<double>> embed_tiles(nn::SegNet<float>& net, const std::vector<RgbImage>& tiles, int batch) {
  std::vector<std::vector<double>> out;
  const int size = net.config().input_size;
  for (std::size_t start = 0; start < tiles.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(tiles.size(), start + static_cast<std::size_t>(batch));
    nn::Tensor<float> t(static_cast<int>(end - start), 3, size, size);
    for (std::size_t i = start; i < end; ++i) nn::write_image(t, static_cast<int>(i - start), tiles[i]);
    for (auto& e : net.embed(t)) out.emplace_back(e.begin(), e.end());
  }
  return out;
}

RgbImage load_network_tile(const fs::path& path, int input_size) {
  auto img = load_rgb(path);
  if (img.width() != input_size || img.height() != input_size) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + " is " + std::to_string(img.width()) + "x" +
                                              std::to_string(img.height()) + ", network expects " +
                                              std::to_string(input_size));
  }
  return img;
}

void stage_synth(const PipelineConfig& cfg) {
  const auto dir = fresh_stage_dir(cfg, "synth", {"images", "masks", "ledgers"});
  std::vector<PanelEntry> entries;
  for (int p = 0; p < cfg.synthetic.panels; ++p) {
    SceneConfig scene = cfg.synthetic.scene;
    char id[16];
    std::snprintf(id, sizeof id, "P%03d", p);
    scene.panel_id = id;
    Rng rng(derive_seed(stage_seed(cfg, "synth"), {static_cast<std::uint64_t>(p)}));
    const auto series = generate_series(scene, cfg.synthetic.frames, rng);
    for (const auto& f : series.frames) {
      PanelEntry e{scene.panel_id, f.date, scene.site, {}, {}};
      e.image = dir / "images" / (e.key() + ".png");
      e.mask = dir / "masks" / (e.key() + ".png");
      save_rgb(f.image.pixels, e.image);
      save_mask(f.mask, e.mask);
      entries.push_back(e);
    }
    write_json(dir / "ledgers" / (scene.panel_id + ".json"), series.ledger.to_json());
    save_mask(series.ledger.attachment, dir / "ledgers" / (scene.panel_id + "_attachment.png"));
  }
  write_panel_index(dir / "panels.csv", entries);
  write_json(dir / "scene.json", cfg.synthetic.scene.to_json());
  log("synth", std::to_string(entries.size()) + " images from " + std::to_string(cfg.synthetic.panels) + " panels");
}

void stage_preprocess(const PipelineConfig& cfg) {
  const auto panels = read_panel_index(input_index(cfg));
  const auto dir = fresh_stage_dir(cfg, "preprocess", {"images", "masks"});
  std::vector<PanelEntry> out;
  for (const auto& e : panels) {
    PanelImage raw{load_rgb(e.image), e.panel_id, e.date, e.site};
    PanelEntry o = e;
    o.image = dir / "images" / (e.key() + ".png");
    save_rgb(preprocess_panel(raw, cfg.preprocess).pixels, o.image);
    if (!e.mask.empty()) {
      o.mask = dir / "masks" / (e.key() + ".png");
      save_mask(preprocess_mask(load_mask(e.mask), cfg.preprocess), o.mask);
    }
    out.push_back(o);
  }
  write_panel_index(dir / "panels.csv", out);
  log("preprocess", std::to_string(out.size()) + " panels");
}

void stage_tile(const PipelineConfig& cfg) {
  const auto index = cfg.stage_dir("preprocess") / "panels.csv";
  require(index, "preprocess");
  const auto panels = read_panel_index(index);
  const auto dir = fresh_stage_dir(cfg, "tile", {"images", "masks"});
  const auto& pc = cfg.preprocess;
  csv::Table t;
  t.header = {"tile_id", "panel_id", "x", "y", "size", "image", "mask"};
  for (const auto& e : panels) {
    const auto image = load_rgb(e.image);
    std::vector<std::pair<TileGeometry, SegmentationMask>> masks;
    if (!e.mask.empty()) masks = tile_panel(load_mask(e.mask), pc.tile_size, pc.overlap);
    const auto tiles = tile_panel(image, pc.tile_size, pc.overlap);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const auto& g = tiles[i].first;
      const std::string id = e.key() + "_x" + std::to_string(g.x) + "_y" + std::to_string(g.y);
      const std::string img = "images/" + id + ".png";
      save_rgb(downsample(tiles[i].second, pc.downsample), dir / img);
      std::string msk;
      if (!masks.empty()) {
        msk = "masks/" + id + ".png";
        save_mask(downsample(masks[i].second, pc.downsample), dir / msk);
      }
      t.rows.push_back({id, e.key(), std::to_string(g.x), std::to_string(g.y), std::to_string(g.size), img, msk});
    }
  }
  csv::write(dir / "tiles.csv", t);
  log("tile", std::to_string(t.rows.size()) + " tiles");
}

void stage_manifest(const PipelineConfig& cfg) {
  const auto tiles_csv = cfg.stage_dir("tile") / "tiles.csv";
  require(tiles_csv, "tile");
  const auto t = csv::read(tiles_csv);
  const auto base = tiles_csv.parent_path();
  DatasetManifest m;
  for (const auto& row : t.rows) {
    TileRecord r;
    r.tile_id = t.get(row, "tile_id");
    r.panel_id = t.get(row, "panel_id");
    r.geometry = {std::stoi(t.get(row, "x")), std::stoi(t.get(row, "y")), std::stoi(t.get(row, "size"))};
    r.image_path = base / t.get(row, "image");
    if (!t.get(row, "mask").empty()) {
      r.mask_path = base / t.get(row, "mask");
      r.histogram = class_histogram(load_mask(r.mask_path));
    }
    m.records.push_back(std::move(r));
  }
  m.validate(true);
  const auto dir = fresh_stage_dir(cfg, "manifest");
  m.write_csv(dir / "manifest.csv");
  log("manifest", std::to_string(m.records.size()) + " records");
}

void stage_synth_overlap(const PipelineConfig& cfg) {
  const auto src = cfg.stage_dir("manifest") / "manifest.csv";
  require(src, "manifest");
  auto m = DatasetManifest::read_csv(src);
  const auto dir = fresh_stage_dir(cfg, "synth-overlap", {"images", "masks"});
  auto extra = synthesize_overlap_tiles(m, dir);
  const auto n = extra.size();
  for (auto& r : extra) m.records.push_back(std::move(r));
  m.write_csv(dir / "manifest.csv");
  log("synth-overlap", std::to_string(n) + " overlap tiles added");
}

void stage_split(const PipelineConfig& cfg) {
  const auto src = cfg.curation.synthesize_overlap ? cfg.stage_dir("synth-overlap") / "manifest.csv"
                                                    : cfg.stage_dir("manifest") / "manifest.csv";
  require(src, cfg.curation.synthesize_overlap ? "synth-overlap" : "manifest");
  auto m = DatasetManifest::read_csv(src);
  const auto split = evolutionary_split(m, cfg.curation.val_fraction, cfg.curation.ga, stage_seed(cfg, "split"));
  apply_split(m, split);
  const auto dir = fresh_stage_dir(cfg, "split");
  m.write_csv(dir / "manifest.csv");
  int n_train = 0, n_val = 0;
  for (const auto& r : m.records) {
    n_train += r.split == Split::Train;
    n_val += r.split == Split::Val;
  }
  write_json(dir / "split.json", {{"kl", split.kl},
                                  {"initial_best_kl", split.initial_best_kl},
                                  {"best_kl_per_generation", split.best_kl_per_generation},
                                  {"seed", split.seed},
                                  {"val_fraction", cfg.curation.val_fraction},
                                  {"train_tiles", n_train},
                                  {"val_tiles", n_val}});
  log("split", std::to_string(n_train) + " train / " + std::to_string(n_val) + " val, KL " + csv::format_number(split.kl));
}

void stage_oversample(const PipelineConfig& cfg) {
  const auto m = DatasetManifest::read_csv(split_manifest(cfg));
  std::vector<TileRecord> train;
  for (const auto& r : m.records)
    if (r.split == Split::Train) train.push_back(r);
  const auto weights = class_weights(pooled_distribution(m, Split::Train));
  const auto plan = oversample_counts(train, weights, cfg.curation.alpha);
  const auto dir = fresh_stage_dir(cfg, "oversample");
  plan.write(dir / "plan.csv", dir / "plan.json");
  int extra = 0;
  for (const auto& [id, n] : plan.extra_counts) extra += n;
  log("oversample", std::to_string(extra) + " extra presentations over " + std::to_string(train.size()) + " tiles");
}

std::vector<TrainingSample> load_samples(const DatasetManifest& m, Split split, int input_size,
                                         const std::map<std::string, int>& extra) {
  std::vector<TrainingSample> out;
  for (const auto& r : m.records) {
    if (r.split != split || !r.labeled()) continue;
    TrainingSample s;
    s.tile_id = r.tile_id;
    s.image = load_network_tile(r.image_path, input_size);
    s.mask = load_mask(r.mask_path);
    if (auto it = extra.find(r.tile_id); it != extra.end()) s.extra = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

void stage_train(const PipelineConfig& cfg) {
  const auto m = DatasetManifest::read_csv(split_manifest(cfg));
  std::map<std::string, int> extra;
  const auto plan_dir = cfg.stage_dir("oversample");
  if (fs::exists(plan_dir / "plan.csv")) {
    for (const auto& [id, n] : OversamplingPlan::read(plan_dir / "plan.csv", plan_dir / "plan.json").extra_counts) {
      extra[id] = n;
    }
  } else {
    log("train", "no oversampling plan; every tile presented once per epoch");
  }
  const int size = cfg.network.input_size;
  const auto train = load_samples(m, Split::Train, size, extra);
  const auto val = load_samples(m, Split::Val, size, {});

  auto net_cfg = cfg.network;
  net_cfg.init_seed = stage_seed(cfg, "init");
  auto net = nn::build_network<float>(net_cfg);
  auto tc = cfg.training;
  tc.seed = stage_seed(cfg, "train");

  const auto dir = fresh_stage_dir(cfg, "train");
  const auto result = train_two_phase(*net, train, val, tc, [](const EpochRecord& r) {
    std::ostringstream s;
    s << "phase " << r.phase << " epoch " << r.epoch << " lr " << r.lr << " train " << r.train_loss << " val "
      << r.val_loss << " mIoU " << r.val_miou << (r.decay_event ? " decay" : "") << (r.stop_event ? " stop" : "");
    log("train", s.str());
  });
  const nlohmann::json summary{{"best_val_loss", result.best_val_loss},
                               {"best_phase", result.best_phase},
                               {"best_epoch", result.best_epoch},
                               {"epochs", result.log.size()},
                               {"train_tiles", train.size()},
                               {"val_tiles", val.size()},
                               {"training", tc.to_json()}};
  nn::save_checkpoint(*net, dir / "model.fsck", summary);
  write_training_log(dir / "training_log.csv", result.log);
  write_json(dir / "summary.json", summary);
}

std::pair<ProbabilityField, SegmentationMask> predict_panel(nn::SegNet<float>& net, const RgbImage& image,
                                                            const PreprocessConfig& pc, int batch) {
  auto tiles = tile_panel(image, pc.tile_size, pc.overlap);
  std::vector<RgbImage> inputs;
  for (const auto& [g, t] : tiles) inputs.push_back(downsample(t, pc.downsample));
  auto fields = predict_fields(net, inputs, batch);
  std::vector<std::pair<TileGeometry, ProbabilityField>> placed;
  for (std::size_t i = 0; i < tiles.size(); ++i) placed.emplace_back(tiles[i].first, upsample(fields[i], pc.downsample));
  return stitch_probabilities(placed, image.width(), image.height());
}

void stage_predict(const PipelineConfig& cfg, const StageOptions& opt) {
  auto net = load_model(cfg, opt);
  if (net->config().input_size != cfg.network.input_size) {
    throw Error(ErrorCode::ConfigError, "checkpoint input size differs from network.input_size");
  }
  const auto m = DatasetManifest::read_csv(split_manifest(cfg));
  const auto dir = fresh_stage_dir(cfg, "predict", {"tiles", "panels"});
  const int batch = cfg.training.batch_size;

  std::vector<std::string> ids;
  std::vector<RgbImage> images;
  for (const auto& r : m.records) {
    if (r.split != Split::Val) continue;
    ids.push_back(r.tile_id);
    images.push_back(load_network_tile(r.image_path, net->config().input_size));
  }
  const auto fields = predict_fields(*net, images, batch);
  csv::Table t;
  t.header = {"tile_id", "mask", "uncertainty"};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string file = "tiles/" + ids[i] + ".png";
    save_mask(argmax_mask(fields[i]), dir / file);
    t.rows.push_back({ids[i], file, csv::format_number(tile_uncertainty(fields[i]))});
  }
  csv::write(dir / "tile_predictions.csv", t);

  const auto index = cfg.stage_dir("preprocess") / "panels.csv";
  std::size_t panels = 0;
  if (fs::exists(index)) {
    std::vector<PanelEntry> out;
    for (auto e : read_panel_index(index)) {
      const auto [field, mask] = predict_panel(*net, load_rgb(e.image), cfg.preprocess, batch);
      e.image = dir / "panels" / (e.key() + ".png");
      save_mask(mask, e.image);
      out.push_back(e);
    }
    panels = out.size();
    csv::Table p;
    p.header = {"panel_id", "date", "prediction"};
    for (const auto& e : out) p.rows.push_back({e.panel_id, e.date, "panels/" + e.key() + ".png"});
    csv::write(dir / "panels.csv", p);
  }
  log("predict", std::to_string(ids.size()) + " validation tiles, " + std::to_string(panels) + " panels");
}

void stage_metrics(const PipelineConfig& cfg) {
  const auto preds_csv = cfg.stage_dir("predict") / "tile_predictions.csv";
  require(preds_csv, "predict");
  const auto m = DatasetManifest::read_csv(split_manifest(cfg));
  const auto t = csv::read(preds_csv);
  std::vector<SegmentationMask> preds, truths;
  for (const auto& row : t.rows) {
    const auto& r = m.find(t.get(row, "tile_id"));
    if (!r.labeled()) continue;
    preds.push_back(load_mask(preds_csv.parent_path() / t.get(row, "mask")));
    truths.push_back(load_mask(r.mask_path));
  }
  const auto dir = fresh_stage_dir(cfg, "metrics");
  const auto report = evaluate_metrics(preds, truths);
  report.write(dir);

  const auto panels_csv = cfg.stage_dir("predict") / "panels.csv";
  const auto index = cfg.stage_dir("preprocess") / "panels.csv";
  if (fs::exists(panels_csv) && fs::exists(index)) {
    std::map<std::pair<std::string, std::string>, fs::path> truth_of;
    for (const auto& e : read_panel_index(index))
      if (!e.mask.empty()) truth_of[{e.panel_id, e.date}] = e.mask;
    const auto p = csv::read(panels_csv);
    std::vector<SegmentationMask> pp, pt;
    for (const auto& row : p.rows) {
      auto it = truth_of.find({p.get(row, "panel_id"), p.get(row, "date")});
      if (it == truth_of.end()) continue;
      pp.push_back(load_mask(panels_csv.parent_path() / p.get(row, "prediction")));
      pt.push_back(load_mask(it->second));
    }
    if (!pp.empty()) {
      fs::create_directories(dir / "panels");
      evaluate_metrics(pp, pt).write(dir / "panels");
    }
  }
  log("metrics", "validation mIoU " + csv::format_number(report.mean.iou) + ", mean accuracy " +
                     csv::format_number(report.mean.accuracy));
}

void stage_embed(const PipelineConfig& cfg, const StageOptions& opt) {
  auto net = load_model(cfg, opt);
  fs::path src = cfg.stage_dir("split") / "manifest.csv";
  if (!fs::exists(src)) src = cfg.stage_dir("manifest") / "manifest.csv";
  require(src, "manifest");
  const auto m = DatasetManifest::read_csv(src);
  auto in_pool = [&](const TileRecord& r) {
    if (opt.pool == "all") return true;
    if (opt.pool == "unassigned") return r.split == Split::Unassigned;
    if (opt.pool == "val") return r.split == Split::Val;
    if (opt.pool == "train") return r.split == Split::Train;
    throw Error(ErrorCode::ConfigError, "pool must be all, unassigned, val or train");
  };
  std::vector<std::string> ids;
  std::vector<RgbImage> images;
  for (const auto& r : m.records) {
    if (!in_pool(r)) continue;
    ids.push_back(r.tile_id);
    images.push_back(load_network_tile(r.image_path, net->config().input_size));
  }
  if (ids.empty()) throw Error(ErrorCode::PoolTooSmall, "no tiles in the '" + opt.pool + "' pool");
  const int batch = cfg.training.batch_size;
  const auto fields = predict_fields(*net, images, batch);
  const auto embeddings = embed_tiles(*net, images, batch);

  const auto dir = fresh_stage_dir(cfg, "embed");
  csv::Table scores, emb;
  scores.header = {"tile_id", "uncertainty", "embedding_path"};
  emb.header = {"tile_id"};
  for (std::size_t d = 0; d < embeddings.front().size(); ++d) emb.header.push_back("e" + std::to_string(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    scores.rows.push_back({ids[i], csv::format_number(tile_uncertainty(fields[i])), "embeddings.csv"});
    csv::Row row{ids[i]};
    for (double v : embeddings[i]) row.push_back(csv::format_number(v));
    emb.rows.push_back(std::move(row));
  }
  csv::write(dir / "pool_scores.csv", scores);
  csv::write(dir / "embeddings.csv", emb);
  log("embed", std::to_string(ids.size()) + " tiles, embedding size " + std::to_string(embeddings.front().size()));
}

std::vector<PoolEntry> read_pool(const PipelineConfig& cfg) {
  const auto dir = cfg.stage_dir("embed");
  require(dir / "pool_scores.csv", "embed");
  const auto emb = csv::read(dir / "embeddings.csv");
  std::map<std::string, std::vector<double>> by_id;
  for (const auto& row : emb.rows) {
    std::vector<double> v;
    for (std::size_t c = 1; c < row.size(); ++c) v.push_back(std::stod(row[c]));
    by_id[row[0]] = std::move(v);
  }
  const auto scores = csv::read(dir / "pool_scores.csv");
  std::vector<PoolEntry> pool;
  for (const auto& row : scores.rows) {
    const auto id = scores.get(row, "tile_id");
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::LengthMismatch, "no embedding for tile " + id);
    pool.push_back({id, it->second, std::stod(scores.get(row, "uncertainty"))});
  }
  return pool;
}

void stage_select(const PipelineConfig& cfg) {
  const auto pool = read_pool(cfg);
  const auto sel = select_annotation_batch(pool, cfg.selection);
  const auto dir = fresh_stage_dir(cfg, "select");
  std::ofstream(dir / "selection.txt") << [&] {
    std::string s;
    for (const auto& id : sel.selected) s += id + "\n";
    return s;
  }();
  std::ofstream(dir / "candidates.txt") << [&] {
    std::string s;
    for (const auto& id : sel.candidates) s += id + "\n";
    return s;
  }();
  csv::Table t;
  t.header = {"step", "tile_id", "cover"};
  for (std::size_t i = 0; i < sel.selected.size(); ++i) {
    t.rows.push_back({std::to_string(i + 1), sel.selected[i], csv::format_number(sel.cover[i])});
  }
  csv::write(dir / "cover.csv", t);
  log("select", std::to_string(sel.selected.size()) + " of " + std::to_string(pool.size()) + " tiles selected");
}

void stage_project(const PipelineConfig& cfg) {
  const auto pool = read_pool(cfg);
  std::vector<std::vector<double>> emb;
  for (const auto& p : pool) emb.push_back(p.embedding);
  const auto proj = project_latent_space(emb, cfg.projection);
  const auto dir = fresh_stage_dir(cfg, "project");
  csv::Table t;
  t.header = {"tile_id", "x", "y"};
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    t.rows.push_back({pool[i].tile_id, csv::format_number(proj.coords(r, 0)), csv::format_number(proj.coords(r, 1))});
  }
  csv::write(dir / "projection.csv", t);
  log("project", std::to_string(pool.size()) + " points, final KL " + csv::format_number(proj.final_kl));
}

std::vector<PanelEntry> labeled_panels(const PipelineConfig& cfg) {
  const auto index = cfg.stage_dir("preprocess") / "panels.csv";
  require(index, "preprocess");
  std::vector<PanelEntry> out;
  for (const auto& e : read_panel_index(index))
    if (!e.mask.empty()) out.push_back(e);
  return out;
}

void stage_simulate_points(const PipelineConfig& cfg, const StageOptions& opt) {
  const auto panels = labeled_panels(cfg);
  if (panels.empty()) throw Error(ErrorCode::EmptyImageSet, "no labeled panels to sample");
  std::vector<SegmentationMask> masks;
  for (const auto& e : panels) masks.push_back(load_mask(e.mask));
  auto sc = cfg.sampling;
  sc.seed = stage_seed(cfg, "simulate-points");
  sc.jobs = cfg.jobs;
  const auto report = sampling_error_report(masks, sc, opt.dump_trials);
  const auto dir = fresh_stage_dir(cfg, "simulate-points");
  report.write_csv(dir / "report.csv");
  if (opt.dump_trials) report.write_trials(dir / "trials.csv");
  csv::Table images;
  images.header = {"image", "panel_id", "date"};
  for (std::size_t i = 0; i < panels.size(); ++i) images.rows.push_back({std::to_string(i), panels[i].panel_id, panels[i].date});
  csv::write(dir / "images.csv", images);
  log("simulate-points", std::to_string(masks.size()) + " images, n=" + std::to_string(sc.points_per_image) +
                             ", N=" + std::to_string(sc.repetitions));
}

void stage_layers(const PipelineConfig& cfg) {
  std::map<std::string, std::vector<std::pair<std::string, SegmentationMask>>> by_panel;
  for (const auto& e : labeled_panels(cfg)) by_panel[e.panel_id].emplace_back(e.date, load_mask(e.mask));
  const auto dir = fresh_stage_dir(cfg, "layers");
  nlohmann::json summary = nlohmann::json::array();
  for (auto& [panel, masks] : by_panel) {
    const auto stack = build_layer_stack(std::move(masks), panel);
    const auto report = direct_surface_attachment(stack, {cfg.succession.reset_on_bare});
    const auto matrices = stack.depth() > 1 ? transition_matrices(stack) : std::vector<TransitionMatrix>{};
    export_succession(stack, matrices, report, dir / panel, cfg.succession.threshold);
    summary.push_back({{"panel_id", panel}, {"frames", stack.depth()}, {"attachment", report.coverage.p}});
  }
  write_json(dir / "summary.json", summary);
  log("layers", std::to_string(by_panel.size()) + " panels");
}

}  // namespace

void run_stage(std::string_view stage, const PipelineConfig& cfg, const StageOptions& opt) {
  if (stage == "synth") return stage_synth(cfg);
  if (stage == "preprocess") return stage_preprocess(cfg);
  if (stage == "tile") return stage_tile(cfg);
  if (stage == "manifest") return stage_manifest(cfg);
  if (stage == "synth-overlap") return stage_synth_overlap(cfg);
  if (stage == "split") return stage_split(cfg);
  if (stage == "oversample") return stage_oversample(cfg);
  if (stage == "train") return stage_train(cfg);
  if (stage == "predict") return stage_predict(cfg, opt);
  if (stage == "metrics") return stage_metrics(cfg);
  if (stage == "embed") return stage_embed(cfg, opt);
  if (stage == "select") return stage_select(cfg);
  if (stage == "project") return stage_project(cfg);
  if (stage == "simulate-points") return stage_simulate_points(cfg, opt);
  if (stage == "layers") return stage_layers(cfg);
  throw Error(ErrorCode::ConfigError, "unknown stage '" + std::string(stage) + "'");
}

}  // namespace foulseg
