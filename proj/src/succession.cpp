#include "foulseg/succession.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"
#include "foulseg/image.hpp"

namespace foulseg {

namespace {

bool is_iso_date(const std::string& s) {
  int y = 0, m = 0, d = 0;
  char tail = 0;
  if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &tail) != 3) return false;
  return m >= 1 && m <= 12 && d >= 1 && d <= 31;
}

constexpr std::uint8_t kBare = id(FoulingClass::Bare);
constexpr std::uint8_t kSlime = id(FoulingClass::Slime);

}  // namespace

LayerStack build_layer_stack(std::vector<std::pair<std::string, SegmentationMask>> masks, std::string panel_id) {
  if (masks.empty()) throw Error(ErrorCode::InvalidConfig, "layer stack needs at least one mask");
  for (const auto& [date, mask] : masks) {
    if (!is_iso_date(date)) throw Error(ErrorCode::InvalidConfig, "not an ISO date: '" + date + "'");
    if (mask.width() != masks.front().second.width() || mask.height() != masks.front().second.height()) {
      throw Error(ErrorCode::DimensionMismatch, "mask for " + date + " differs in size");
    }
  }
  std::stable_sort(masks.begin(), masks.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < masks.size(); ++i)
    if (masks[i].first == masks[i - 1].first) throw Error(ErrorCode::DuplicateDate, masks[i].first);

  LayerStack stack;
  stack.panel_id = std::move(panel_id);
  for (auto& [date, mask] : masks) {
    stack.timestamps.push_back(date);
    stack.layers.push_back(std::move(mask));
  }
  return stack;
}

AttachmentReport direct_surface_attachment(const LayerStack& stack, const AttachmentOptions& options) {
  const int w = stack.width(), h = stack.height();
  AttachmentReport r;
  r.bottom = SegmentationMask(w, h, kIgnoreId);
  auto out = r.bottom.labels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    int organism = -1;
    bool slime = false, labeled = false;
    for (const auto& layer : stack.layers) {
      const auto v = layer.labels()[i];
      if (v == kIgnoreId) continue;
      labeled = true;
      if (v == kSlime) {
        slime = true;
      } else if (v == kBare) {
        if (options.reset_on_bare) {
          organism = -1;
          slime = false;
        }
      } else if (organism < 0) {
        organism = v;
        if (!options.reset_on_bare) break;
      }
    }
    if (!labeled) continue;
    out[i] = organism >= 0 ? static_cast<std::uint8_t>(organism) : (slime ? kSlime : kBare);
  }
  const auto hist = class_histogram(r.bottom);
  if (labeled_count(hist) > 0) r.coverage = distribution_from_histogram(hist);
  return r;
}

std::int64_t TransitionMatrix::total() const noexcept {
  std::int64_t t = 0;
  for (const auto& row : counts)
    for (auto v : row) t += v;
  return t;
}

std::vector<TransitionMatrix> transition_matrices(const LayerStack& stack) {
  if (stack.depth() < 2) throw Error(ErrorCode::SingleFrame, "transitions need at least two frames");
  std::vector<TransitionMatrix> out;
  for (std::size_t t = 0; t + 1 < stack.depth(); ++t) {
    TransitionMatrix m;
    m.from_time = stack.timestamps[t];
    m.to_time = stack.timestamps[t + 1];
    const auto a = stack.layers[t].labels();
    const auto b = stack.layers[t + 1].labels();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] < kNumClasses && b[i] < kNumClasses) ++m.counts[a[i]][b[i]];
    for (std::size_t r = 0; r < kNumClasses; ++r) {
      std::int64_t sum = 0;
      for (auto v : m.counts[r]) sum += v;
      if (sum == 0) continue;
      for (std::size_t c = 0; c < kNumClasses; ++c) m.row_probs[r][c] = static_cast<double>(m.counts[r][c]) / sum;
    }
    out.push_back(m);
  }
  return out;
}

std::vector<SuccessionNode> succession_nodes(const LayerStack& stack, double threshold) {
  const std::size_t pixels = stack.layers.front().size();
  std::int64_t root = 0;
  for (auto v : stack.layers.front().labels()) root += v < kNumClasses;
  const double cutoff = threshold * static_cast<double>(root);

  std::vector<SuccessionNode> out;
  std::vector<std::vector<int>> kept;  // prefixes surviving at the previous depth
  for (std::size_t depth = 1; depth <= stack.depth(); ++depth) {
    std::map<std::vector<int>, std::int64_t> counts;
    std::vector<int> path(depth);
    for (std::size_t i = 0; i < pixels; ++i) {
      bool ok = true;
      for (std::size_t t = 0; t < depth && ok; ++t) {
        const auto v = stack.layers[t].labels()[i];
        ok = v < kNumClasses;
        path[t] = v;
      }
      if (ok) ++counts[path];
    }
    std::vector<std::vector<int>> next;
    for (const auto& [p, n] : counts) {
      if (static_cast<double>(n) < cutoff) continue;
      if (depth > 1 && !std::binary_search(kept.begin(), kept.end(), std::vector<int>(p.begin(), p.end() - 1))) continue;
      out.push_back({p, n});
      next.push_back(p);
    }
    kept = std::move(next);
  }
  return out;
}

nlohmann::json succession_json(const LayerStack& stack, double threshold) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : succession_nodes(stack, threshold)) nodes.push_back({{"path", n.path}, {"pixels", n.pixels}});
  return {{"panel_id", stack.panel_id}, {"timestamps", stack.timestamps}, {"threshold", threshold}, {"nodes", nodes}};
}

void export_succession(const LayerStack& stack, const std::vector<TransitionMatrix>& matrices,
                       const AttachmentReport& report, const std::filesystem::path& dir, double threshold) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "stack", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string());
  const auto& tax = ClassTaxonomy::standard();

  csv::Table coverage;
  coverage.header = {"timestamp", "class_id", "class", "pixels", "coverage"};
  for (std::size_t t = 0; t < stack.depth(); ++t) {
    const auto hist = class_histogram(stack.layers[t]);
    const auto total = labeled_count(hist);
    for (int c = 0; c < kNumClasses; ++c) {
      const auto n = hist[static_cast<std::size_t>(c)];
      coverage.rows.push_back({stack.timestamps[t], std::to_string(c), std::string(tax.name(c)), std::to_string(n),
                               csv::format_number(total > 0 ? static_cast<double>(n) / total : 0.0)});
    }
  }
  csv::write(dir / "coverage.csv", coverage);

  csv::Table attach;
  attach.header = {"class_id", "class", "coverage"};
  for (int c = 0; c < kNumClasses; ++c)
    attach.rows.push_back({std::to_string(c), std::string(tax.name(c)), csv::format_number(report.coverage[c])});
  csv::write(dir / "attachment.csv", attach);
  save_mask(report.bottom, dir / "bottom.png");

  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < stack.depth(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.png", t);
    save_mask(stack.layers[t], dir / "stack" / name);
    frames.push_back({{"timestamp", stack.timestamps[t]}, {"file", name}});
  }
  write_json(dir / "stack" / "index.json", {{"panel_id", stack.panel_id},
                                            {"width", stack.width()},
                                            {"height", stack.height()},
                                            {"frames", frames}});

  if (stack.depth() < 2) return;
  csv::Table trans;
  trans.header = {"from_time", "to_time", "from_class", "to_class", "count", "row_prob"};
  for (const auto& m : matrices)
    for (int a = 0; a < kNumClasses; ++a)
      for (int b = 0; b < kNumClasses; ++b) {
        const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
        trans.rows.push_back({m.from_time, m.to_time, std::to_string(a), std::to_string(b),
                              std::to_string(m.counts[ua][ub]), csv::format_number(m.row_probs[ua][ub])});
      }
  csv::write(dir / "transitions.csv", trans);
  write_json(dir / "succession.json", succession_json(stack, threshold));
}

LayerStack load_layer_stack(const std::filesystem::path& stack_dir) {
  const auto index = read_json(stack_dir / "index.json");
  std::vector<std::pair<std::string, SegmentationMask>> masks;
  try {
    for (const auto& f : index.at("frames")) {
      masks.emplace_back(f.at("timestamp").get<std::string>(), load_mask(stack_dir / f.at("file").get<std::string>()));
    }
    return build_layer_stack(std::move(masks), index.value("panel_id", std::string()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, (stack_dir / "index.json").string() + ": " + e.what());
  }
}

}  // namespace foulseg
