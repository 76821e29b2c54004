#include "foulseg/training/metrics.hpp"

#include <fstream>

#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"

namespace foulseg {

namespace {

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

void accumulate(ClassMetrics& sum, const ClassMetrics& m) {
  sum.accuracy += m.accuracy;
  sum.iou += m.iou;
  sum.f1 += m.f1;
  sum.precision += m.precision;
  sum.recall += m.recall;
}

ClassMetrics scaled(ClassMetrics m, double s) {
  m.accuracy *= s;
  m.iou *= s;
  m.f1 *= s;
  m.precision *= s;
  m.recall *= s;
  return m;
}

ClassMetrics class_mean(const std::array<std::optional<ClassMetrics>, kNumClasses>& values) {
  ClassMetrics sum;
  int n = 0;
  for (const auto& v : values) {
    if (!v) continue;
    accumulate(sum, *v);
    ++n;
  }
  return n > 0 ? scaled(sum, 1.0 / n) : sum;
}

nlohmann::json metrics_json(const ClassMetrics& m) {
  return {{"accuracy", m.accuracy}, {"iou", m.iou}, {"f1", m.f1}, {"precision", m.precision}, {"recall", m.recall}};
}

std::vector<std::string> metrics_row(const std::string& label, const std::optional<ClassMetrics>& m, int tiles) {
  std::vector<std::string> row{label};
  if (!m) {
    row.insert(row.end(), 5, "");
  } else {
    for (double v : {m->accuracy, m->iou, m->f1, m->precision, m->recall}) row.push_back(csv::format_number(v));
  }
  row.push_back(std::to_string(tiles));
  return row;
}

}  // namespace

ClassMetrics metrics_from_counts(const ClassCounts& k) {
  ClassMetrics m;
  const double tp = static_cast<double>(k.tp), fp = static_cast<double>(k.fp), fn = static_cast<double>(k.fn);
  const double total = tp + fp + fn + static_cast<double>(k.tn);
  m.accuracy = ratio(tp + static_cast<double>(k.tn), total);
  m.iou = ratio(tp, tp + fp + fn);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  return m;
}

MetricsReport evaluate_metrics(std::span<const SegmentationMask> predictions, std::span<const SegmentationMask> truths) {
  if (predictions.size() != truths.size()) {
    throw Error(ErrorCode::LengthMismatch, "predictions and truths differ in count");
  }
  MetricsReport r;
  std::array<ClassMetrics, kNumClasses> sums{};
  std::array<ClassCounts, kNumClasses> pooled{};
  std::int64_t correct = 0, labeled = 0;

  for (std::size_t t = 0; t < truths.size(); ++t) {
    const auto& gt = truths[t];
    const auto& pr = predictions[t];
    if (gt.width() != pr.width() || gt.height() != pr.height()) {
      throw Error(ErrorCode::ShapeMismatch, "prediction and truth differ in size for tile " + std::to_string(t));
    }
    ConfusionMatrix local{};
    std::int64_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const auto g = gt.labels()[i], p = pr.labels()[i];
      if (g >= kNumClasses || p >= kNumClasses) continue;
      ++local[g][p];
      ++n;
    }
    std::array<ClassCounts, kNumClasses> counts{};
    std::array<bool, kNumClasses> present{};
    for (int c = 0; c < kNumClasses; ++c) {
      auto& k = counts[static_cast<std::size_t>(c)];
      std::int64_t row = 0, col = 0;
      for (int o = 0; o < kNumClasses; ++o) {
        row += local[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
        col += local[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      }
      k.tp = local[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
      k.fn = row - k.tp;
      k.fp = col - k.tp;
      k.tn = n - k.tp - k.fn - k.fp;
      present[static_cast<std::size_t>(c)] = row > 0 || col > 0;
      auto& pk = pooled[static_cast<std::size_t>(c)];
      pk.tp += k.tp;
      pk.fp += k.fp;
      pk.fn += k.fn;
      pk.tn += k.tn;
      if (present[static_cast<std::size_t>(c)]) {
        accumulate(sums[static_cast<std::size_t>(c)], metrics_from_counts(k));
        ++r.counting_tiles[static_cast<std::size_t>(c)];
      }
      correct += k.tp;
    }
    labeled += n;
    for (int a = 0; a < kNumClasses; ++a)
      for (int b = 0; b < kNumClasses; ++b)
        r.confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
            local[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    r.tile_counts.push_back(counts);
    r.tile_present.push_back(present);
  }

  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (r.counting_tiles[c] > 0) r.per_class[c] = scaled(sums[c], 1.0 / r.counting_tiles[c]);
    const auto& k = pooled[c];
    if (k.tp + k.fp + k.fn > 0) r.pooled[c] = metrics_from_counts(k);
  }
  r.mean = class_mean(r.per_class);
  r.pooled_mean = class_mean(r.pooled);
  r.pixel_accuracy = ratio(static_cast<double>(correct), static_cast<double>(labeled));
  return r;
}

std::array<std::array<double, kNumClasses>, kNumClasses> MetricsReport::row_normalized() const {
  std::array<std::array<double, kNumClasses>, kNumClasses> out{};
  for (std::size_t a = 0; a < kNumClasses; ++a) {
    std::int64_t row = 0;
    for (auto v : confusion[a]) row += v;
    if (row == 0) continue;
    for (std::size_t b = 0; b < kNumClasses; ++b) out[a][b] = static_cast<double>(confusion[a][b]) / row;
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  const auto& tax = ClassTaxonomy::standard();
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    nlohmann::json e{{"id", c}, {"name", tax.name(static_cast<int>(c))}, {"tiles", counting_tiles[c]}};
    e["mean_over_tiles"] = per_class[c] ? metrics_json(*per_class[c]) : nlohmann::json();
    e["pooled"] = pooled[c] ? metrics_json(*pooled[c]) : nlohmann::json();
    classes.push_back(e);
  }
  return {{"num_tiles", tile_counts.size()},
          {"classes", classes},
          {"mean", metrics_json(mean)},
          {"pooled_mean", metrics_json(pooled_mean)},
          {"pixel_accuracy", pixel_accuracy},
          {"confusion", confusion}};
}

void MetricsReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.json");
    out << to_json().dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "metrics.json").string());
  }
  const auto& tax = ClassTaxonomy::standard();
  csv::Table table;
  table.header = {"class", "accuracy", "iou", "f1", "precision", "recall", "tiles"};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    table.rows.push_back(metrics_row(std::string(tax.name(static_cast<int>(c))), per_class[c], counting_tiles[c]));
  }
  table.rows.push_back(metrics_row("mean", mean, static_cast<int>(tile_counts.size())));
  table.rows.push_back(metrics_row("pooled_mean", pooled_mean, static_cast<int>(tile_counts.size())));
  csv::write(dir / "metrics.csv", table);

  csv::Table raw, norm;
  raw.header.push_back("truth");
  for (std::size_t c = 0; c < kNumClasses; ++c) raw.header.emplace_back(tax.name(static_cast<int>(c)));
  norm.header = raw.header;
  const auto rn = row_normalized();
  for (std::size_t a = 0; a < kNumClasses; ++a) {
    std::vector<std::string> r1{std::string(tax.name(static_cast<int>(a)))}, r2 = r1;
    for (std::size_t b = 0; b < kNumClasses; ++b) {
      r1.push_back(std::to_string(confusion[a][b]));
      r2.push_back(csv::format_number(rn[a][b]));
    }
    raw.rows.push_back(r1);
    norm.rows.push_back(r2);
  }
  csv::write(dir / "confusion.csv", raw);
  csv::write(dir / "confusion_normalized.csv", norm);
}

}  // namespace foulseg
