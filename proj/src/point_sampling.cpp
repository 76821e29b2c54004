#include "foulseg/point_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"

namespace foulseg {

void SamplingConfig::validate() const {
  if (points_per_image < 1 || repetitions < 1) throw Error(ErrorCode::InvalidConfig, "sampling: n and N must be >= 1");
  if (points_per_image > 65535) throw Error(ErrorCode::InvalidConfig, "sampling: n must be <= 65535");
  if (jobs < 1) throw Error(ErrorCode::InvalidConfig, "sampling: jobs must be >= 1");
}

SamplingConfig SamplingConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"points_per_image", "repetitions"}, "sampling");
  SamplingConfig c;
  read_key(j, "points_per_image", c.points_per_image, "sampling");
  read_key(j, "repetitions", c.repetitions, "sampling");
  if (c.points_per_image < 1 || c.repetitions < 1) throw Error(ErrorCode::ConfigError, "sampling: n and N must be >= 1");
  return c;
}

nlohmann::json SamplingConfig::to_json() const {
  return {{"points_per_image", points_per_image}, {"repetitions", repetitions}};
}

std::vector<std::uint8_t> labeled_population(const SegmentationMask& mask) {
  std::vector<std::uint8_t> pop;
  pop.reserve(mask.size());
  for (auto v : mask.labels())
    if (v < kNumClasses) pop.push_back(v);
  return pop;
}

ClassDistribution sample_points(const std::vector<std::uint8_t>& population, int n, Rng& rng) {
  if (population.empty()) throw Error(ErrorCode::AllPixelsIgnored, "no labeled pixels to sample");
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "need at least one point");
  std::array<int, kNumClasses> hits{};
  for (int i = 0; i < n; ++i) ++hits[population[rng.below(population.size())]];
  ClassDistribution d;
  for (int c = 0; c < kNumClasses; ++c) d[c] = static_cast<double>(hits[static_cast<std::size_t>(c)]) / n;
  return d;
}

ClassDistribution sample_points(const SegmentationMask& mask, int n, Rng& rng) {
  return sample_points(labeled_population(mask), n, rng);
}

namespace {

struct Moments {
  double sum = 0, sum_sq = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
  }
};

struct ImageAccumulator {
  std::array<Moments, kNumClasses> abs_err, pct_err, left_out;
  std::vector<SamplingTrial> trials;
};

void mean_and_se(const Moments& m, std::int64_t count, double& mean, double& se) {
  const double n = static_cast<double>(count);
  mean = m.sum / n;
  if (count < 2) {
    se = 0.0;
    return;
  }
  const double var = std::max(0.0, (m.sum_sq - n * mean * mean) / (n - 1));
  se = std::sqrt(var / n);
}

}  // namespace

SamplingReport sampling_error_report(const std::vector<SegmentationMask>& masks, const SamplingConfig& config,
                                     bool keep_trials) {
  config.validate();
  SamplingReport report;
  report.config = config;

  std::vector<std::vector<std::uint8_t>> populations;
  for (const auto& m : masks) {
    populations.push_back(labeled_population(m));
    if (populations.back().empty()) throw Error(ErrorCode::AllPixelsIgnored, "a mask has no labeled pixels");
    report.truth.push_back(class_distribution(m));
  }

  const std::size_t images = masks.size();
  std::vector<ImageAccumulator> acc(images);
  auto run_image = [&](std::size_t i) {
    const auto& p = report.truth[i];
    auto& a = acc[i];
    for (int rep = 0; rep < config.repetitions; ++rep) {
      Rng rng = sampling_stream(config.seed, i, rep);
      SamplingTrial trial{static_cast<int>(i), rep, {}};
      for (int k = 0; k < config.points_per_image; ++k) ++trial.hits[populations[i][rng.below(populations[i].size())]];
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (p.p[c] <= 0) continue;
        const double est = static_cast<double>(trial.hits[c]) / config.points_per_image;
        const double err = std::abs(p.p[c] - est);
        a.abs_err[c].add(err);
        a.pct_err[c].add(err / p.p[c]);
        a.left_out[c].add(trial.hits[c] == 0 ? 1.0 : 0.0);
      }
      if (keep_trials) a.trials.push_back(trial);
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), std::max<std::size_t>(images, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < images; ++i) run_image(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < images; i += workers) run_image(i);
      });
    for (auto& t : pool) t.join();
  }

  for (std::size_t c = 0; c < kNumClasses; ++c) {
    Moments mae, mape, lop;
    int n_images = 0;
    for (std::size_t i = 0; i < images; ++i) {
      if (report.truth[i].p[c] <= 0) continue;
      ++n_images;
      mae.sum += acc[i].abs_err[c].sum;
      mae.sum_sq += acc[i].abs_err[c].sum_sq;
      mape.sum += acc[i].pct_err[c].sum;
      mape.sum_sq += acc[i].pct_err[c].sum_sq;
      lop.sum += acc[i].left_out[c].sum;
      lop.sum_sq += acc[i].left_out[c].sum_sq;
    }
    if (n_images == 0) continue;
    ClassSamplingStats s;
    s.n_images = n_images;
    s.n_samples = static_cast<std::int64_t>(n_images) * config.repetitions;
    mean_and_se(mae, s.n_samples, s.mae, s.mae_se);
    mean_and_se(mape, s.n_samples, s.mape, s.mape_se);
    mean_and_se(lop, s.n_samples, s.lop, s.lop_se);
    report.classes[c] = s;
  }
  if (keep_trials)
    for (auto& a : acc) report.trials.insert(report.trials.end(), a.trials.begin(), a.trials.end());
  return report;
}

void SamplingReport::write_csv(const std::filesystem::path& path) const {
  const auto& tax = ClassTaxonomy::standard();
  csv::Table t;
  t.header = {"class", "mae", "mae_se", "mape", "mape_se", "lop", "lop_se", "n_images", "n_samples"};
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& s = classes[static_cast<std::size_t>(c)];
    if (!s) continue;
    t.rows.push_back({std::string(tax.name(c)), csv::format_number(s->mae), csv::format_number(s->mae_se),
                      csv::format_number(s->mape), csv::format_number(s->mape_se), csv::format_number(s->lop),
                      csv::format_number(s->lop_se), std::to_string(s->n_images), std::to_string(s->n_samples)});
  }
  csv::write(path, t);
}

void SamplingReport::write_trials(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << "image,repetition,class,p,p_hat\n";
  for (const auto& t : trials) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double p = truth[static_cast<std::size_t>(t.image)].p[c];
      if (p <= 0 && t.hits[c] == 0) continue;
      out << t.image << ',' << t.repetition << ',' << c << ',' << csv::format_number(p) << ','
          << csv::format_number(static_cast<double>(t.hits[c]) / config.points_per_image) << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

}  // namespace foulseg
