#include "foulseg/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"
#include "foulseg/image.hpp"
#include "foulseg/rng.hpp"

namespace foulseg {

std::string_view to_string(TileOrigin o) noexcept {
  switch (o) {
    case TileOrigin::Random: return "random";
    case TileOrigin::Expert: return "expert";
    case TileOrigin::Active: return "active";
    case TileOrigin::Synthetic: return "synthetic";
  }
  return "random";
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

TileOrigin parse_origin(std::string_view s) {
  if (s == "random") return TileOrigin::Random;
  if (s == "expert") return TileOrigin::Expert;
  if (s == "active") return TileOrigin::Active;
  if (s == "synthetic") return TileOrigin::Synthetic;
  throw Error(ErrorCode::ConfigError, "unknown tile origin '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "unassigned" || s.empty()) return Split::Unassigned;
  throw Error(ErrorCode::ConfigError, "unknown split '" + std::string(s) + "'");
}

void DatasetManifest::validate(bool check_files) const {
  std::set<std::string_view> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.tile_id).second) throw Error(ErrorCode::InvalidConfig, "duplicate tile_id '" + r.tile_id + "'");
    if (!check_files) continue;
    if (!std::filesystem::exists(r.image_path)) throw Error(ErrorCode::MissingFile, r.image_path.string());
    if (r.labeled() && !std::filesystem::exists(r.mask_path)) throw Error(ErrorCode::MissingFile, r.mask_path.string());
  }
}

const TileRecord& DatasetManifest::find(std::string_view tile_id) const {
  for (const auto& r : records)
    if (r.tile_id == tile_id) return r;
  throw Error(ErrorCode::InvalidConfig, "unknown tile_id '" + std::string(tile_id) + "'");
}

DatasetManifest DatasetManifest::read_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto base = path.parent_path();
  auto resolve = [&base](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  DatasetManifest m;
  for (const auto& row : table.rows) {
    TileRecord r;
    r.tile_id = table.get(row, "tile_id");
    r.panel_id = table.get(row, "panel_id");
    r.geometry = {std::stoi(table.get(row, "x")), std::stoi(table.get(row, "y")), std::stoi(table.get(row, "size"))};
    r.image_path = resolve(table.get(row, "image_path"));
    r.mask_path = resolve(table.get(row, "mask_path"));
    r.origin = parse_origin(table.get(row, "origin"));
    r.split = parse_split(table.get(row, "split"));
    for (int c = 0; c < kNumClasses; ++c) {
      r.histogram[static_cast<std::size_t>(c)] = std::stoll(table.get(row, "h" + std::to_string(c)));
    }
    m.records.push_back(std::move(r));
  }
  m.validate(false);
  return m;
}

void DatasetManifest::write_csv(const std::filesystem::path& path) const {
  csv::Table table;
  table.header = {"tile_id", "panel_id", "x", "y", "size", "image_path", "mask_path", "origin", "split"};
  for (int c = 0; c < kNumClasses; ++c) table.header.push_back("h" + std::to_string(c));
  const auto base = path.parent_path();
  auto relative = [&base](const std::filesystem::path& p) -> std::string {
    if (p.empty()) return {};
    if (base.empty()) return p.generic_string();
    return std::filesystem::proximate(p, base).generic_string();
  };
  for (const auto& r : records) {
    csv::Row row = {r.tile_id,
                    r.panel_id,
                    std::to_string(r.geometry.x),
                    std::to_string(r.geometry.y),
                    std::to_string(r.geometry.size),
                    relative(r.image_path),
                    relative(r.mask_path),
                    std::string(to_string(r.origin)),
                    std::string(to_string(r.split))};
    for (auto h : r.histogram) row.push_back(std::to_string(h));
    table.rows.push_back(std::move(row));
  }
  csv::write(path, table);
}

namespace {

struct PanelGrid {
  std::vector<int> xs;
  std::vector<int> ys;
  std::map<std::pair<int, int>, const TileRecord*> labeled;
  int size = 0;
};

std::map<std::string, PanelGrid> panel_grids(const DatasetManifest& manifest) {
  std::map<std::string, PanelGrid> grids;
  for (const auto& r : manifest.records) {
    if (r.origin == TileOrigin::Synthetic) continue;
    auto& g = grids[r.panel_id];
    g.xs.push_back(r.geometry.x);
    g.ys.push_back(r.geometry.y);
    g.size = r.geometry.size;
    if (r.labeled()) g.labeled[{r.geometry.x, r.geometry.y}] = &r;
  }
  for (auto& [id, g] : grids) {
    for (auto* v : {&g.xs, &g.ys}) {
      std::sort(v->begin(), v->end());
      v->erase(std::unique(v->begin(), v->end()), v->end());
    }
  }
  return grids;
}

struct Block {
  std::string panel_id;
  TileGeometry geometry;
  std::array<const TileRecord*, 4> sources;
};

std::vector<Block> overlap_blocks(const DatasetManifest& manifest) {
  std::vector<Block> blocks;
  for (const auto& [panel_id, g] : panel_grids(manifest)) {
    for (std::size_t j = 0; j + 1 < g.ys.size(); ++j) {
      if (g.ys[j + 1] - g.ys[j] >= g.size) continue;
      for (std::size_t i = 0; i + 1 < g.xs.size(); ++i) {
        if (g.xs[i + 1] - g.xs[i] >= g.size) continue;
        std::array<const TileRecord*, 4> src{};
        bool complete = true;
        std::size_t k = 0;
        for (int y : {g.ys[j], g.ys[j + 1]})
          for (int x : {g.xs[i], g.xs[i + 1]}) {
            auto it = g.labeled.find({x, y});
            complete = complete && it != g.labeled.end() && it->second->geometry.size == g.size;
            src[k++] = complete ? it->second : nullptr;
          }
        if (!complete) continue;
        blocks.push_back({panel_id, {(g.xs[i] + g.xs[i + 1]) / 2, (g.ys[j] + g.ys[j + 1]) / 2, g.size}, src});
      }
    }
  }
  return blocks;
}

std::string synthetic_id(const std::string& panel_id, const TileGeometry& g) {
  return panel_id + "_syn_" + std::to_string(g.x) + "_" + std::to_string(g.y);
}

}  // namespace

std::vector<std::pair<std::string, TileGeometry>> overlap_tile_geometries(const DatasetManifest& manifest) {
  std::vector<std::pair<std::string, TileGeometry>> out;
  for (const auto& b : overlap_blocks(manifest)) out.emplace_back(b.panel_id, b.geometry);
  return out;
}

std::vector<TileRecord> synthesize_overlap_tiles(const DatasetManifest& manifest,
                                                 const std::filesystem::path& out_dir) {
  std::vector<TileRecord> out;
  std::set<std::string> ids;
  for (const auto& r : manifest.records) ids.insert(r.tile_id);

  for (const auto& block : overlap_blocks(manifest)) {
    std::array<RgbImage, 4> images;
    std::array<SegmentationMask, 4> masks;
    for (std::size_t k = 0; k < 4; ++k) {
      images[k] = load_rgb(block.sources[k]->image_path);
      masks[k] = load_mask(block.sources[k]->mask_path);
    }
    const int pixels = images[0].width();
    const int size = block.geometry.size;
    if (pixels <= 0 || size % pixels != 0) throw Error(ErrorCode::InvalidGeometry, "tile raster does not divide tile size");
    const int factor = size / pixels;

    RgbImage image(pixels, pixels);
    SegmentationMask mask(pixels, pixels);
    for (int py = 0; py < pixels; ++py)
      for (int px = 0; px < pixels; ++px) {
        const int gx = block.geometry.x + px * factor;
        const int gy = block.geometry.y + py * factor;
        for (std::size_t k = 0; k < 4; ++k) {
          const auto& sg = block.sources[k]->geometry;
          if (gx < sg.x || gy < sg.y || gx >= sg.x + sg.size || gy >= sg.y + sg.size) continue;
          const int sx = (gx - sg.x) / factor;
          const int sy = (gy - sg.y) / factor;
          for (int c = 0; c < 3; ++c) image.at(px, py, c) = images[k].at(sx, sy, c);
          mask.at(px, py) = masks[k].at(sx, sy);
          break;
        }
      }

    TileRecord r;
    r.tile_id = synthetic_id(block.panel_id, block.geometry);
    if (!ids.insert(r.tile_id).second) throw Error(ErrorCode::InvalidConfig, "synthetic tile id collides: " + r.tile_id);
    r.panel_id = block.panel_id;
    r.geometry = block.geometry;
    r.image_path = out_dir / "images" / (r.tile_id + ".png");
    r.mask_path = out_dir / "masks" / (r.tile_id + ".png");
    r.origin = TileOrigin::Synthetic;
    r.histogram = class_histogram(mask);
    r.split = Split::Unassigned;
    save_rgb(image, r.image_path);
    save_mask(mask, r.mask_path);
    out.push_back(std::move(r));
  }
  return out;
}

double kl_divergence(const ClassDistribution& p, const ClassDistribution& q) {
  double d = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (p[c] > 0.0) d += p[c] * std::log((p[c] + kKlEpsilon) / (q[c] + kKlEpsilon));
  }
  return std::max(d, 0.0);
}

GaConfig GaConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"population", "generations", "tournament_size", "elitism", "mutation_probability"}, "split.ga");
  GaConfig c;
  read_key(j, "population", c.population, "split.ga");
  read_key(j, "generations", c.generations, "split.ga");
  read_key(j, "tournament_size", c.tournament_size, "split.ga");
  read_key(j, "elitism", c.elitism, "split.ga");
  read_key(j, "mutation_probability", c.mutation_probability, "split.ga");
  if (c.population < 2 || c.generations < 0 || c.tournament_size < 1 || c.elitism < 0 || c.elitism >= c.population ||
      c.mutation_probability < 0.0 || c.mutation_probability > 1.0) {
    throw Error(ErrorCode::ConfigError, "split.ga: invalid genetic algorithm parameters");
  }
  return c;
}

nlohmann::json GaConfig::to_json() const {
  return {{"population", population},
          {"generations", generations},
          {"tournament_size", tournament_size},
          {"elitism", elitism},
          {"mutation_probability", mutation_probability}};
}

namespace {

// Genome: exactly `val_count` of the eligible tiles carry `true` (validation).
using Genome = std::vector<char>;

class SplitFitness {
 public:
  SplitFitness(std::vector<ClassHistogram> eligible, ClassHistogram total)
      : eligible_(std::move(eligible)), total_(total) {}

  double operator()(const Genome& g) const {
    std::array<double, kNumClasses> val{};
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g[i]) continue;
      for (std::size_t c = 0; c < kNumClasses; ++c) val[c] += static_cast<double>(eligible_[i][c]);
    }
    std::array<double, kNumClasses> train{};
    double val_sum = 0.0;
    double train_sum = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      train[c] = static_cast<double>(total_[c]) - val[c];
      val_sum += val[c];
      train_sum += train[c];
    }
    if (val_sum <= 0.0 || train_sum <= 0.0) return std::numeric_limits<double>::infinity();
    ClassDistribution p;
    ClassDistribution q;
    for (int c = 0; c < kNumClasses; ++c) {
      p[c] = train[static_cast<std::size_t>(c)] / train_sum;
      q[c] = val[static_cast<std::size_t>(c)] / val_sum;
    }
    return kl_divergence(p, q);
  }

 private:
  std::vector<ClassHistogram> eligible_;
  ClassHistogram total_;
};

Genome random_genome(std::size_t n, std::size_t val_count, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  Genome g(n, 0);
  for (std::size_t i = 0; i < val_count; ++i) g[order[i]] = 1;
  return g;
}

void repair(Genome& g, std::size_t val_count, Rng& rng) {
  std::vector<std::size_t> members;
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < g.size(); ++i) (g[i] ? members : others).push_back(i);
  while (members.size() > val_count) {
    const auto k = static_cast<std::size_t>(rng.below(members.size()));
    g[members[k]] = 0;
    members[k] = members.back();
    members.pop_back();
  }
  while (members.size() < val_count) {
    const auto k = static_cast<std::size_t>(rng.below(others.size()));
    g[others[k]] = 1;
    members.push_back(others[k]);
    others[k] = others.back();
    others.pop_back();
  }
}

void swap_mutation(Genome& g, Rng& rng) {
  std::vector<std::size_t> members;
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < g.size(); ++i) (g[i] ? members : others).push_back(i);
  if (members.empty() || others.empty()) return;
  g[members[static_cast<std::size_t>(rng.below(members.size()))]] = 0;
  g[others[static_cast<std::size_t>(rng.below(others.size()))]] = 1;
}

}  // namespace

SplitAssignment evolutionary_split(const DatasetManifest& manifest, double val_fraction, const GaConfig& ga,
                                   std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(ErrorCode::InfeasibleFraction, "validation fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> eligible_index;
  std::vector<ClassHistogram> eligible;
  ClassHistogram total{};
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (!r.labeled()) continue;
    for (std::size_t c = 0; c < kNumClasses; ++c) total[c] += r.histogram[c];
    if (r.origin == TileOrigin::Random || r.origin == TileOrigin::Expert) {
      eligible_index.push_back(i);
      eligible.push_back(r.histogram);
    }
  }
  const std::size_t n = eligible.size();
  if (n < 2) throw Error(ErrorCode::InfeasibleFraction, "need at least two split-eligible tiles");
  const auto val_count = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (val_count < 1 || val_count >= n) {
    throw Error(ErrorCode::InfeasibleFraction,
                "fraction " + std::to_string(val_fraction) + " of " + std::to_string(n) + " tiles leaves an empty side");
  }

  const SplitFitness fitness(std::move(eligible), total);
  Rng rng(seed);
  const auto pop_size = static_cast<std::size_t>(ga.population);
  std::vector<Genome> population;
  std::vector<double> scores;
  for (std::size_t i = 0; i < pop_size; ++i) {
    population.push_back(random_genome(n, val_count, rng));
    scores.push_back(fitness(population.back()));
  }

  auto ranked = [&scores]() {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&scores](auto a, auto b) { return scores[a] < scores[b]; });
    return order;
  };
  auto tournament = [&]() {
    std::size_t best = static_cast<std::size_t>(rng.below(pop_size));
    for (int k = 1; k < ga.tournament_size; ++k) {
      const auto challenger = static_cast<std::size_t>(rng.below(pop_size));
      if (scores[challenger] < scores[best]) best = challenger;
    }
    return best;
  };

  SplitAssignment result;
  result.seed = seed;
  result.initial_best_kl = scores[ranked().front()];
  result.best_kl_per_generation.push_back(result.initial_best_kl);

  for (int gen = 0; gen < ga.generations; ++gen) {
    const auto order = ranked();
    std::vector<Genome> next;
    std::vector<double> next_scores;
    for (int e = 0; e < ga.elitism; ++e) {
      next.push_back(population[order[static_cast<std::size_t>(e)]]);
      next_scores.push_back(scores[order[static_cast<std::size_t>(e)]]);
    }
    while (next.size() < pop_size) {
      const auto& a = population[tournament()];
      const auto& b = population[tournament()];
      Genome child(n);
      for (std::size_t i = 0; i < n; ++i) child[i] = (rng.next() & 1U) ? a[i] : b[i];
      repair(child, val_count, rng);
      if (rng.bernoulli(ga.mutation_probability)) swap_mutation(child, rng);
      next_scores.push_back(fitness(child));
      next.push_back(std::move(child));
    }
    population = std::move(next);
    scores = std::move(next_scores);
    result.best_kl_per_generation.push_back(scores[ranked().front()]);
  }

  const auto best = ranked().front();
  result.kl = scores[best];
  for (const auto& r : manifest.records) {
    if (r.labeled()) result.assignment[r.tile_id] = Split::Train;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (population[best][i]) result.assignment[manifest.records[eligible_index[i]].tile_id] = Split::Val;
  }
  return result;
}

void apply_split(DatasetManifest& manifest, const SplitAssignment& split) {
  for (auto& r : manifest.records) {
    auto it = split.assignment.find(r.tile_id);
    r.split = it == split.assignment.end() ? Split::Unassigned : it->second;
  }
}

ClassDistribution pooled_distribution(const DatasetManifest& manifest, Split split) {
  ClassHistogram h{};
  for (const auto& r : manifest.records) {
    if (r.split != split) continue;
    for (std::size_t c = 0; c < kNumClasses; ++c) h[c] += r.histogram[c];
  }
  return distribution_from_histogram(h);
}

ClassWeights class_weights(const ClassDistribution& train_dist) {
  double max_p = 0.0;
  for (int c = 0; c < kNumClasses; ++c) max_p = std::max(max_p, train_dist[c]);
  if (max_p <= 0.0) throw Error(ErrorCode::EmptyDistribution, "training distribution has no mass");
  ClassWeights w{};
  for (int c = 0; c < kNumClasses; ++c) {
    if (train_dist[c] > 0.0) w[static_cast<std::size_t>(c)] = std::max(max_p / train_dist[c], 1.0);
  }
  return w;
}

OversamplingPlan oversample_counts(const std::vector<TileRecord>& train_tiles, const ClassWeights& weights,
                                   double alpha) {
  if (alpha < 0.0) throw Error(ErrorCode::InvalidConfig, "alpha must be >= 0");
  OversamplingPlan plan;
  plan.weights = weights;
  plan.alpha = alpha;
  plan.num_tiles = static_cast<int>(train_tiles.size());
  if (train_tiles.empty()) return plan;

  for (const auto& t : train_tiles) {
    const auto p = distribution_from_histogram(t.histogram);
    double score = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      if (p[c] <= 0.0) continue;
      const auto& w = weights[static_cast<std::size_t>(c)];
      if (!w) throw Error(ErrorCode::InvalidConfig, "tile '" + t.tile_id + "' contains a class without weight");
      score += p[c] * *w;
    }
    plan.scores.push_back(score);
  }
  double sum = 0.0;
  for (double s : plan.scores) sum += s;
  plan.mean_score = sum / static_cast<double>(plan.scores.size());

  // Scores are sums of products of rationals; the tolerance keeps an exact
  // integer excess from rounding up through representation error.
  constexpr double kTolerance = 1e-9;
  for (std::size_t i = 0; i < train_tiles.size(); ++i) {
    const double excess = plan.scores[i] - plan.mean_score - alpha;
    const auto n = static_cast<int>(std::max(std::ceil(excess - kTolerance), 0.0));
    plan.extra_counts.emplace_back(train_tiles[i].tile_id, n);
  }
  return plan;
}

void OversamplingPlan::write(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) const {
  csv::Table table;
  table.header = {"tile_id", "n_i"};
  for (const auto& [id, n] : extra_counts) table.rows.push_back({id, std::to_string(n)});
  csv::write(csv_path, table);

  nlohmann::json j;
  nlohmann::json w = nlohmann::json::array();
  for (const auto& v : weights) w.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  j["weights"] = w;
  j["alpha"] = alpha;
  j["mean_score"] = mean_score;
  j["num_tiles"] = num_tiles;
  if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
  std::ofstream out(json_path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + json_path.string());
}

OversamplingPlan OversamplingPlan::read(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
  OversamplingPlan plan;
  const auto table = csv::read(csv_path);
  for (const auto& row : table.rows) plan.extra_counts.emplace_back(table.get(row, "tile_id"), std::stoi(table.get(row, "n_i")));
  std::ifstream in(json_path);
  if (!in) throw Error(ErrorCode::MissingFile, json_path.string());
  const auto j = nlohmann::json::parse(in);
  const auto& w = j.at("weights");
  for (std::size_t c = 0; c < kNumClasses && c < w.size(); ++c) {
    if (!w[c].is_null()) plan.weights[c] = w[c].get<double>();
  }
  plan.alpha = j.at("alpha").get<double>();
  plan.mean_score = j.at("mean_score").get<double>();
  plan.num_tiles = j.at("num_tiles").get<int>();
  return plan;
}

}  // namespace foulseg
