// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "foulseg/active_learning.hpp"
#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/curation.hpp"
#include "foulseg/pipeline.hpp"
#include "foulseg/point_sampling.hpp"
#include "foulseg/preprocessing.hpp"
#include "foulseg/probability.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/segnet/loss.hpp"
#include "foulseg/segnet/network.hpp"
#include "foulseg/succession.hpp"
#include "foulseg/synthetic.hpp"
#include "foulseg/training/metrics.hpp"
#include "foulseg/training/schedule.hpp"
#include "foulseg/training/trainer.hpp"

using namespace foulseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

SegmentationMask random_mask(Rng& rng, int w, int h, int classes, double ignore = 0.0) {
  SegmentationMask m(w, h);
  for (auto& v : m.labels()) v = rng.bernoulli(ignore) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(classes));
  return m;
}

// ---------------------------------------------------------------- 1
void loss_identities(Outcome& o) {
  Rng rng(1);
  auto gt = random_mask(rng, 16, 16, 5);
  const auto perfect = nn::combined_loss(ProbabilityField::one_hot(gt), gt);
  o.expect(perfect.total < 1e-5, "perfect prediction loss < 1e-5");

  SegmentationMask single(16, 16, 4);
  const auto uniform = nn::combined_loss(ProbabilityField::uniform(16, 16), single);
  o.expect(std::abs(uniform.ce - std::log(10.0)) <= 1e-6, "CE = ln 10");
  o.expect(std::abs(uniform.dice - 9.0 / 11.0) <= 1e-6, "dice = 9/11");
  o.detail << "perfect=" << fmt(perfect.total) << " ce=" << fmt(uniform.ce, 10) << " dice=" << fmt(uniform.dice, 10);
}

// ---------------------------------------------------------------- 2
void gradient_check(Outcome& o) {
  nn::NetworkConfig c;
  c.input_size = 32;
  c.encoder = nn::EncoderKind::Tiny;
  c.encoder_channels = {3, 4, 4, 5, 6};
  c.decoder_filters = {6, 5, 4, 4, 3};
  c.init_seed = 11;
  nn::SegNet<double> net(c);
  Rng rng(21);
  nn::Tensor<double> x(4, 3, 32, 32);
  for (auto& v : x.data) v = rng.normal();
  std::vector<SegmentationMask> masks;
  for (int i = 0; i < 4; ++i) masks.push_back(random_mask(rng, 32, 32, 4));

  net.zero_grad();
  nn::Tensor<double> dz;
  nn::batch_loss_and_gradient<double>(net.forward(x, true), masks, &dz);
  net.backward(dz);

  const double h = 1e-5;
  std::size_t checked = 0, failed = 0;
  double worst = 0;
  for (auto* p : net.parameters()) {
    if (p->buffer) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = nn::batch_loss_and_gradient<double>(net.forward(x, true), masks, nullptr).total;
      p->value[i] = saved - h;
      const double down = nn::batch_loss_and_gradient<double>(net.forward(x, true), masks, nullptr).total;
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad[i];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
      ++checked;
      failed += rel >= 1e-4;
    }
  }
  o.expect(failed == 0, std::to_string(failed) + " parameters above 1e-4");
  o.detail << checked << " parameters, worst relative error " << fmt(worst, 3);
}

// ---------------------------------------------------------------- 3
struct Rational {
  long long num, den;  // den > 0
};

Rational reduce(long long n, long long d) {
  if (d < 0) n = -n, d = -d;
  const long long g = std::gcd(n < 0 ? -n : n, d);
  return {n / g, d / g};
}
Rational operator+(Rational a, Rational b) { return reduce(a.num * b.den + b.num * a.den, a.den * b.den); }
Rational operator-(Rational a, Rational b) { return reduce(a.num * b.den - b.num * a.den, a.den * b.den); }
Rational operator*(Rational a, Rational b) { return reduce(a.num * b.num, a.den * b.den); }
long long ceil_of(Rational r) { return r.num >= 0 ? (r.num + r.den - 1) / r.den : -((-r.num) / r.den); }

TileRecord fixture_tile(const std::string& id, std::vector<std::int64_t> counts) {
  TileRecord r;
  r.tile_id = id;
  r.panel_id = "fixture";
  r.geometry = {0, 0, 384};
  r.image_path = id + ".png";
  r.mask_path = id + ".png";
  r.split = Split::Train;
  for (std::size_t c = 0; c < counts.size(); ++c) r.histogram[c] = counts[c];
  return r;
}

void oversampling_table(Outcome& o) {
  const std::vector<std::vector<std::int64_t>> counts = {{10, 0, 0}, {8, 2, 0}, {6, 2, 2}, {10, 0, 0}, {6, 0, 4}};
  std::vector<TileRecord> tiles;
  for (std::size_t i = 0; i < counts.size(); ++i) tiles.push_back(fixture_tile("t" + std::to_string(i), counts[i]));
  DatasetManifest m;
  m.records = tiles;
  const auto w = class_weights(pooled_distribution(m, Split::Train));

  // hand-computed table: p = (40, 4, 6)/50, so w = (1, 10, 20/3)
  const std::vector<Rational> w_exact = {{1, 1}, {10, 1}, {20, 3}};
  for (std::size_t c = 0; c < 3; ++c) {
    o.expect(w[c] && std::abs(*w[c] - static_cast<double>(w_exact[c].num) / w_exact[c].den) < 1e-12,
             "w_" + std::to_string(c));
  }
  o.expect(!w[3], "absent class has no weight");

  const std::map<int, std::vector<int>> hand = {{0, {0, 1, 2, 0, 1}}, {1, {0, 0, 1, 0, 0}}, {2, {0, 0, 0, 0, 0}}};
  for (const auto& [alpha, expected] : hand) {
    // exact rational evaluation of score, mean and the ceiling
    std::vector<Rational> scores;
    Rational sum{0, 1};
    for (const auto& k : counts) {
      Rational s{0, 1};
      for (std::size_t c = 0; c < 3; ++c) s = s + Rational{k[c], 10} * w_exact[c];
      scores.push_back(s);
      sum = sum + s;
    }
    const Rational mean = sum * Rational{1, static_cast<long long>(counts.size())};
    const auto plan = oversample_counts(tiles, w, alpha);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const long long oracle = std::max(ceil_of(scores[i] - mean - Rational{alpha, 1}), 0LL);
      o.expect(oracle == expected[i], "rational oracle agrees with hand table");
      o.expect(plan.extra_counts[i].second == expected[i],
               "n_" + std::to_string(i) + " at alpha " + std::to_string(alpha));
    }
  }

  std::vector<TileRecord> worked = {fixture_tile("a", {10}), fixture_tile("b", {2, 8})};
  ClassDistribution p;
  p[0] = 0.9;
  p[1] = 0.1;
  const auto ww = class_weights(p);
  o.expect(*ww[0] == 1.0 && std::abs(*ww[1] - 9.0) < 1e-12, "worked example w = (1, 9)");
  const auto plan = oversample_counts(worked, ww, 2.0);
  o.expect(plan.extra_counts[0].second == 0 && plan.extra_counts[1].second == 2, "worked example n = (0, 2)");
  o.detail << "w=(1,10,20/3); n(alpha=0)=(0,1,2,0,1); worked example w=(1,9) n=(" << plan.extra_counts[0].second
           << "," << plan.extra_counts[1].second << ")";
}

// ---------------------------------------------------------------- 4
double binomial_mae(int n, double p) {
  double total = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double logc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    total += std::exp(logc + k * std::log(p) + (n - k) * std::log1p(-p)) * std::abs(static_cast<double>(k) / n - p);
  }
  return total;
}

void sampling_closed_form(Outcome& o) {
  SegmentationMask m(100, 50, 0);  // 5000 pixels
  for (int i = 0; i < 100; ++i) m.labels()[static_cast<std::size_t>(i)] = 1;  // p = 0.02
  SegmentationMask half(100, 50, 0);
  for (int i = 0; i < 2500; ++i) half.labels()[static_cast<std::size_t>(i)] = 2;  // p = 0.5
  SamplingConfig cfg;
  cfg.points_per_image = 50;
  cfg.repetitions = 100000;
  cfg.seed = 2024;
  const auto lop = sampling_error_report({m}, cfg).classes[1]->lop;
  const auto mae = sampling_error_report({half}, cfg).classes[2]->mae;
  const double lop_ref = std::pow(0.98, 50);
  const double mae_ref = binomial_mae(50, 0.5);
  o.expect(std::abs(lop - lop_ref) <= 0.01, "LOP within 0.01");
  o.expect(std::abs(mae - mae_ref) <= 0.002, "MAE within 0.002");
  o.detail << "LOP " << fmt(lop, 5) << " vs " << fmt(lop_ref, 5) << "; MAE " << fmt(mae, 5) << " vs " << fmt(mae_ref, 5);
}

// ---------------------------------------------------------------- 5
void sampling_ordering(Outcome& o) {
  SceneConfig c;
  c.width = 256;
  c.height = 256;
  ClassStyle slime;
  slime.class_id = id(FoulingClass::Slime);
  slime.family = ShapeFamily::Crust;
  slime.min_count = 5;
  slime.max_count = 7;
  slime.min_size = 50;
  slime.max_size = 80;
  ClassStyle tube;
  tube.class_id = id(FoulingClass::CalcareousTubeworm);
  tube.family = ShapeFamily::Branched;
  tube.min_count = 6;
  tube.max_count = 6;
  tube.min_size = 12;
  tube.max_size = 16;
  c.styles = {slime, tube};
  std::vector<SegmentationMask> masks;
  double coverage = 0;
  for (int p = 0; p < 12; ++p) {
    Rng rng(derive_seed(55, {static_cast<std::uint64_t>(p)}));
    masks.push_back(generate_panel(c, rng).second);
    coverage += class_distribution(masks.back())[7] / 12;
  }
  SamplingConfig sc;
  sc.repetitions = 1000;
  sc.seed = 5;
  const auto r = sampling_error_report(masks, sc);
  const auto& tw = *r.classes[7];
  o.expect(coverage > 0.01 && coverage < 0.02, "branched class near 1.5% coverage");
  o.expect(r.classes[0]->lop == 0.0 && r.classes[1]->lop == 0.0, "dominant classes never left out");
  o.expect(tw.mape > 0.8, "branched MAPE > 80%");
  o.expect(tw.lop > 0.3, "branched LOP > 0.3");
  o.detail << "tubeworm coverage " << fmt(coverage * 100, 3) << "%: MAPE " << fmt(tw.mape * 100, 4) << "%, LOP "
           << fmt(tw.lop, 3) << "; bare/slime LOP " << r.classes[0]->lop << "/" << r.classes[1]->lop;
}

// ---------------------------------------------------------------- 6
void tiling_round_trip(Outcome& o) {
  o.expect(tile_offsets(1472, 384, 64) == std::vector<int>{0, 320, 640, 960, 1088}, "offset fixture");
  Rng rng(6);
  int exact = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int tile = 16 * static_cast<int>(2 + rng.below(4));
    const int overlap = 4 * static_cast<int>(1 + rng.below(3));
    const int w = tile + static_cast<int>(rng.below(90));
    const int h = tile + static_cast<int>(rng.below(90));
    const auto mask = random_mask(rng, w, h, 10);
    std::vector<std::pair<TileGeometry, ProbabilityField>> fields;
    for (const auto& [g, t] : tile_panel(mask, tile, overlap)) fields.emplace_back(g, ProbabilityField::one_hot(t));
    const auto back = stitch_probabilities(fields, w, h).second;
    exact += back == mask;
  }
  o.expect(exact == 50, "all panels pixel-exact");
  o.detail << exact << "/50 panels exact, offsets {0,320,640,960,1088}";
}

// ---------------------------------------------------------------- 7
double kl_oracle(const ClassHistogram& a, const ClassHistogram& b) {
  const double sa = static_cast<double>(std::accumulate(a.begin(), a.end(), std::int64_t{0}));
  const double sb = static_cast<double>(std::accumulate(b.begin(), b.end(), std::int64_t{0}));
  double d = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double p = a[c] / sa, q = b[c] / sb;
    if (p > 0) d += p * std::log((p + 1e-8) / (q + 1e-8));
  }
  return std::max(d, 0.0);
}

void evolutionary_split_check(Outcome& o) {
  Rng rng(7);
  DatasetManifest m;
  for (int i = 0; i < 1000; ++i) {
    TileRecord r = fixture_tile("tile" + std::to_string(i), {});
    r.split = Split::Unassigned;
    // skewed: mostly bare, rare classes concentrated in few tiles
    r.histogram[0] = 2000 + static_cast<std::int64_t>(rng.below(8000));
    for (std::size_t c = 1; c < kNumClasses; ++c) {
      const double rarity = 1.0 / static_cast<double>(c * c);
      if (rng.bernoulli(rarity)) r.histogram[c] = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(6000 / c)));
    }
    m.records.push_back(r);
  }
  const double frac = 0.2;
  const auto t0 = std::chrono::steady_clock::now();
  const auto split = evolutionary_split(m, frac, GaConfig{}, 77);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto again = evolutionary_split(m, frac, GaConfig{}, 77);

  ClassHistogram tr{}, va{};
  for (const auto& r : m.records) {
    auto& h = split.assignment.at(r.tile_id) == Split::Val ? va : tr;
    for (std::size_t c = 0; c < kNumClasses; ++c) h[c] += r.histogram[c];
  }
  const double kl = kl_oracle(tr, va);

  std::vector<double> random_kls;
  std::vector<std::size_t> idx(m.records.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto n_val = static_cast<std::size_t>(std::llround(frac * 1000));
  Rng shuffler(70);
  for (int s = 0; s < 1000; ++s) {
    shuffler.shuffle(idx);
    ClassHistogram a{}, b{};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& h = k < n_val ? b : a;
      for (std::size_t c = 0; c < kNumClasses; ++c) h[c] += m.records[idx[k]].histogram[c];
    }
    random_kls.push_back(kl_oracle(a, b));
  }
  std::nth_element(random_kls.begin(), random_kls.begin() + 500, random_kls.end());
  const double median = random_kls[500];

  o.expect(std::abs(kl - split.kl) < 1e-9, "reported KL matches oracle");
  o.expect(kl <= median, "KL <= median random KL");
  o.expect(split.kl <= split.initial_best_kl, "KL <= best initial individual");
  o.expect(again.assignment == split.assignment && again.kl == split.kl, "deterministic per seed");
  o.detail << "KL " << fmt(kl, 4) << " vs random median " << fmt(median, 4) << ", initial best "
           << fmt(split.initial_best_kl, 4) << " (" << fmt(secs, 3) << " s)";
}

// ---------------------------------------------------------------- 8
void metrics_oracle(Outcome& o) {
  Rng rng(8);
  std::vector<SegmentationMask> preds, truths;
  for (int i = 0; i < 100; ++i) {
    const int classes = 2 + static_cast<int>(rng.below(9));
    truths.push_back(random_mask(rng, 32, 32, classes, 0.03));
    preds.push_back(random_mask(rng, 32, 32, classes, 0.01));
  }
  const auto r = evaluate_metrics(preds, truths);

  bool counts_equal = true;
  double worst = 0;
  std::array<std::array<double, 5>, kNumClasses> sums{};
  std::array<int, kNumClasses> tiles{};
  std::array<std::array<std::int64_t, 4>, kNumClasses> pooled{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int c = 0; c < kNumClasses; ++c) {
      std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t k = 0; k < preds[i].size(); ++k) {
        const int p = preds[i].labels()[k], t = truths[i].labels()[k];
        if (p == kIgnoreId || t == kIgnoreId) continue;
        if (p == c && t == c) ++tp;
        else if (p == c) ++fp;
        else if (t == c) ++fn;
        else ++tn;
      }
      const auto& k = r.tile_counts[i][static_cast<std::size_t>(c)];
      counts_equal = counts_equal && k.tp == tp && k.fp == fp && k.fn == fn && k.tn == tn;
      const auto uc = static_cast<std::size_t>(c);
      pooled[uc][0] += tp;
      pooled[uc][1] += fp;
      pooled[uc][2] += fn;
      pooled[uc][3] += tn;
      if (tp + fp + fn == 0) continue;  // class absent from both masks
      auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
      ++tiles[uc];
      sums[uc][0] += ratio(tp + tn, tp + fp + fn + tn);
      sums[uc][1] += ratio(tp, tp + fp + fn);
      sums[uc][2] += ratio(2.0 * tp, 2.0 * tp + fp + fn);
      sums[uc][3] += ratio(tp, tp + fp);
      sums[uc][4] += ratio(tp, tp + fn);
    }
  }
  std::array<double, 5> mean{};
  int n_classes = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (tiles[c] == 0) {
      o.expect(!r.per_class[c], "absent class has no value");
      continue;
    }
    ++n_classes;
    const auto& got = *r.per_class[c];
    const std::array<double, 5> g = {got.accuracy, got.iou, got.f1, got.precision, got.recall};
    for (std::size_t k = 0; k < 5; ++k) {
      worst = std::max(worst, std::abs(g[k] - sums[c][k] / tiles[c]));
      mean[k] += sums[c][k] / tiles[c];
    }
    const auto& pc = *r.pooled[c];
    worst = std::max(worst, std::abs(pc.iou - static_cast<double>(pooled[c][0]) / (pooled[c][0] + pooled[c][1] + pooled[c][2])));
  }
  const std::array<double, 5> gm = {r.mean.accuracy, r.mean.iou, r.mean.f1, r.mean.precision, r.mean.recall};
  for (std::size_t k = 0; k < 5; ++k) worst = std::max(worst, std::abs(gm[k] - mean[k] / n_classes));
  o.expect(counts_equal, "exact count equality");
  o.expect(worst <= 1e-12, "metric values within 1e-12");
  o.detail << "100 pairs, counts " << (counts_equal ? "exact" : "differ") << ", worst metric deviation " << fmt(worst, 3);
}

// ---------------------------------------------------------------- 9
void active_learning_check(Outcome& o) {
  Rng rng(9);
  int subset_ok = 0, pools = 0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<PoolEntry> pool;
    const int n = 20 + static_cast<int>(rng.below(60));
    for (int i = 0; i < n; ++i) {
      std::vector<double> e(8);
      for (auto& v : e) v = rng.bernoulli(0.3) ? 0.0 : rng.uniform();
      pool.push_back({"t" + std::to_string(i), e, std::floor(rng.uniform() * 20) / 20});  // ties included
    }
    const int K = 5 + static_cast<int>(rng.below(15));
    const auto sel = select_annotation_batch(pool, {K, std::min(K, 4)});
    // independent top-K
    auto sorted = pool;
    std::sort(sorted.begin(), sorted.end(), [](const PoolEntry& a, const PoolEntry& b) {
      return a.uncertainty != b.uncertainty ? a.uncertainty > b.uncertainty : a.tile_id < b.tile_id;
    });
    std::set<std::string> top;
    for (int i = 0; i < K; ++i) top.insert(sorted[static_cast<std::size_t>(i)].tile_id);
    bool ok = true;
    for (const auto& id : sel.selected) ok = ok && top.count(id);
    subset_ok += ok;
    ++pools;
  }
  o.expect(subset_ok == pools, "selection within top-K");

  int optimal = 0, bounded = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PoolEntry> pool;
    for (int i = 0; i < 30; ++i) {
      std::vector<double> e(6);
      for (auto& v : e) v = rng.bernoulli(0.4) ? 0.0 : rng.uniform();
      pool.push_back({"p" + std::to_string(i), e, rng.uniform()});
    }
    const auto sel = select_annotation_batch(pool, {10, 3});
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < pool.size(); ++i) index[pool[i].tile_id] = i;
    auto F = [&](const std::vector<std::size_t>& s) {
      double f = 0;
      for (const auto& x : pool) {
        double best = 0;
        for (auto k : s) {
          const auto& a = x.embedding;
          const auto& b = pool[k].embedding;
          double dot = 0, na = 0, nb = 0;
          for (std::size_t d = 0; d < a.size(); ++d) {
            dot += a[d] * b[d];
            na += a[d] * a[d];
            nb += b[d] * b[d];
          }
          best = std::max(best, na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0);
        }
        f += best;
      }
      return f;
    };
    std::vector<std::size_t> cand, chosen;
    for (const auto& id : sel.candidates) cand.push_back(index[id]);
    for (const auto& id : sel.selected) chosen.push_back(index[id]);
    double opt = 0;
    for (std::size_t a = 0; a < cand.size(); ++a)
      for (std::size_t b = a + 1; b < cand.size(); ++b)
        for (std::size_t c = b + 1; c < cand.size(); ++c) opt = std::max(opt, F({cand[a], cand[b], cand[c]}));
    const double g = F(chosen);
    if (g >= opt - 1e-12) ++optimal;
    else if (g >= (1 - std::exp(-1.0)) * opt) ++bounded;
  }
  o.expect(optimal + bounded == 20, "greedy optimal or within (1-1/e)");
  o.detail << subset_ok << "/" << pools << " pools within top-K; greedy optimal on " << optimal << "/20, bound on "
           << bounded;
}

// ---------------------------------------------------------------- 10
void succession_check(Outcome& o) {
  SceneConfig cfg;
  cfg.width = 120;
  cfg.height = 90;
  cfg.styles.clear();
  auto disc = [](int cls, int x, int y, int r, int birth) {
    ShapeSpec s;
    s.class_id = cls;
    s.x = x;
    s.y = y;
    s.size = r;
    s.lobes = 1;
    s.birth_frame = birth;
    return s;
  };
  ShapeSpec tube;
  tube.class_id = id(FoulingClass::CalcareousTubeworm);
  tube.family = ShapeFamily::Tube;
  tube.x = 90;
  tube.y = 30;
  tube.size = 12;
  tube.seed = 3;
  cfg.shapes = {disc(1, 40, 45, 30, 0),   // slime first
                tube,                     // tubeworm on bare coating
                disc(4, 55, 45, 10, 1),   // bryozoan over slime
                disc(1, 90, 30, 10, 2),   // slime over the tubeworm
                disc(2, 20, 20, 6, 2)};   // barnacle late, partly on slime
  Rng rng(10);
  const auto series = generate_series(cfg, 3, rng);
  const auto& L = series.ledger;

  std::vector<std::pair<std::string, SegmentationMask>> masks;
  for (const auto& f : series.frames) masks.emplace_back(f.date, f.mask);
  const auto stack = build_layer_stack(masks, "scripted");
  const auto att = direct_surface_attachment(stack);
  o.expect(att.bottom == L.attachment, "bottom layer equals ledger");
  const auto ledger_cov = class_distribution(L.attachment);
  o.expect(att.coverage.p == ledger_cov.p, "attachment coverage equals ledger");

  // transitions from the ledger: repaint shapes to recover the top class per frame
  std::vector<SegmentationMask> top(3, SegmentationMask(cfg.width, cfg.height, 0));
  for (int f = 0; f < 3; ++f)
    for (const auto& s : L.shapes) {
      const int age = f - s.birth_frame;
      if (age < 0) continue;
      for (auto px : rasterize_shape(s, age, cfg.growth_divisor, cfg.width, cfg.height))
        top[static_cast<std::size_t>(f)].labels()[static_cast<std::size_t>(px)] = static_cast<std::uint8_t>(s.class_id);
    }
  const auto mats = transition_matrices(stack);
  bool mats_ok = mats.size() == 2;
  for (std::size_t t = 0; mats_ok && t < 2; ++t) {
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> want{};
    for (std::size_t i = 0; i < top[t].size(); ++i) ++want[top[t].labels()[i]][top[t + 1].labels()[i]];
    mats_ok = want == mats[t].counts;
  }
  o.expect(mats_ok, "both transition matrices equal the ledger tally");
  o.expect(!L.events.empty(), "scripted overgrowth recorded");

  Rng r2(11);
  int conserved = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, SegmentationMask>> ms;
    const int depth = 2 + static_cast<int>(r2.below(3));
    const int w = 5 + static_cast<int>(r2.below(20)), h = 5 + static_cast<int>(r2.below(20));
    for (int t = 0; t < depth; ++t) ms.emplace_back(add_months("2020-10-01", t), random_mask(r2, w, h, 10, 0.1));
    const auto st = build_layer_stack(ms);
    const auto mm = transition_matrices(st);
    bool ok = true;
    for (std::size_t t = 0; t + 1 < st.depth(); ++t) {
      std::int64_t joint = 0;
      for (std::size_t i = 0; i < st.layers[t].size(); ++i)
        joint += st.layers[t].labels()[i] != kIgnoreId && st.layers[t + 1].labels()[i] != kIgnoreId;
      ok = ok && mm[t].total() == joint;
      for (const auto& rowp : mm[t].row_probs) {
        const double s = std::accumulate(rowp.begin(), rowp.end(), 0.0);
        ok = ok && (s == 0.0 || std::abs(s - 1.0) < 1e-12);
      }
    }
    const auto a = direct_surface_attachment(st);
    ok = ok && std::abs(std::accumulate(a.coverage.p.begin(), a.coverage.p.end(), 0.0) - 1.0) < 1e-12;
    conserved += ok;
  }
  o.expect(conserved == 50, "conservation on random stacks");
  o.detail << "ledger attachment " << (att.bottom == L.attachment ? "reproduced" : "differs") << ", matrices "
           << (mats_ok ? "exact" : "differ") << ", conservation " << conserved << "/50";
}

// ---------------------------------------------------------------- 11
struct OracleStep {
  double lr;
  bool decay, stop;
};

// Rebuilds the expected lr / decay / stop columns of one phase from its validation losses alone.
std::vector<OracleStep> schedule_oracle(const std::vector<double>& losses, double lr, const ScheduleConfig& cfg) {
  std::vector<OracleStep> out;
  std::size_t last_ref = 0, last_reset = 0;
  double ref = std::numeric_limits<double>::infinity();
  for (std::size_t e = 1; e <= losses.size(); ++e) {
    OracleStep s{lr, false, false};
    if (losses[e - 1] < ref - cfg.improve_threshold) {
      ref = losses[e - 1];
      last_ref = e;
    } else if (e - std::max(last_ref, last_reset) >= static_cast<std::size_t>(cfg.patience)) {
      const double next = std::max(lr / cfg.decay_factor, cfg.lr_floor);
      s.decay = next < lr;
      lr = next;
      last_reset = e;
    }
    const auto best = std::min_element(losses.begin(), losses.begin() + static_cast<long>(e)) - losses.begin();
    s.stop = e - 1 - static_cast<std::size_t>(best) >= static_cast<std::size_t>(cfg.patience);
    out.push_back(s);
  }
  return out;
}

nlohmann::json end_to_end_config(const fs::path& out) {
  auto style = [](FoulingClass k, const char* family, std::array<int, 3> color, int lo, int hi, int smin, int smax) {
    return nlohmann::json{{"class_id", id(k)}, {"family", family}, {"color", color}, {"texture", 14},
                          {"min_count", lo},   {"max_count", hi}, {"min_size", smin}, {"max_size", smax}};
  };
  nlohmann::json scene = {
      {"width", 512},
      {"height", 416},
      {"background_texture", 14},
      {"styles",
       {style(FoulingClass::Slime, "crust", {112, 118, 62}, 3, 5, 40, 60),
        style(FoulingClass::EncrustingBryozoan, "crust", {214, 122, 48}, 2, 4, 20, 34),
        style(FoulingClass::Barnacle, "blob", {228, 222, 206}, 6, 12, 7, 13)}}};
  return {{"paths", {{"output_root", out.string()}}},
          {"seed", 7},
          {"preprocess",
           {{"crop_top_frac", 0}, {"crop_bottom_frac", 0}, {"crop_left_frac", 0}, {"crop_right_frac", 0},
            {"format", "small"}, {"target_small", {512, 416}}, {"contrast_cutoff", 0}, {"unsharp_amount", 0},
            {"tile_size", 128}, {"overlap", 32}, {"downsample", 2}}},
          {"curation", {{"val_fraction", 0.25}}},
          {"network", {{"encoder", "tiny"}}},
          {"synthetic", {{"scene", scene}, {"panels", 12}, {"frames", 1}}}};
}

void end_to_end(Outcome& o) {
  const auto out = fs::current_path() / "acceptance_e2e";
  const auto cfg = PipelineConfig::from_json(end_to_end_config(out));
  const auto t0 = std::chrono::steady_clock::now();
  for (const char* stage : {"synth", "preprocess", "tile", "manifest", "split", "oversample", "train", "predict", "metrics"})
    run_stage(stage, cfg);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;

  const auto manifest = DatasetManifest::read_csv(out / "split" / "manifest.csv");
  std::set<int> classes;
  for (const auto& r : manifest.records)
    for (int c = 0; c < kNumClasses; ++c)
      if (r.histogram[static_cast<std::size_t>(c)] > 0) classes.insert(c);
  o.expect(manifest.records.size() >= 200, ">= 200 tiles");
  o.expect(classes.size() >= 3 && classes.size() <= 5, "3 to 5 classes");

  const auto metrics = read_json(out / "metrics" / "metrics.json");
  const double miou = metrics.at("mean").at("iou");
  const double acc = metrics.at("mean").at("accuracy");
  o.expect(miou >= 0.70, "validation mean IoU >= 0.70");
  o.expect(acc >= 0.90, "mean accuracy >= 0.90");

  const auto log = read_training_log(out / "train" / "training_log.csv");
  bool schedule_ok = !log.empty();
  int decays = 0, stops = 0;
  for (int phase = 1; phase <= 2; ++phase) {
    std::vector<EpochRecord> rows;
    for (const auto& r : log)
      if (r.phase == phase) rows.push_back(r);
    if (rows.empty()) continue;
    std::vector<double> losses;
    for (const auto& r : rows) losses.push_back(r.val_loss);
    const auto want = schedule_oracle(losses, phase == 1 ? cfg.training.phase1_lr : cfg.training.phase2_lr,
                                      cfg.training.schedule);
    for (std::size_t e = 0; e < rows.size(); ++e) {
      schedule_ok = schedule_ok && std::abs(rows[e].lr - want[e].lr) <= 1e-12 * want[e].lr &&
                    rows[e].decay_event == want[e].decay && rows[e].stop_event == want[e].stop;
      decays += rows[e].decay_event;
      stops += rows[e].stop_event;
    }
    // a phase ends at an early stop or at the epoch cap, nowhere else
    const bool ended_by_stop = want.back().stop;
    schedule_ok = schedule_ok && (ended_by_stop || static_cast<int>(rows.size()) == cfg.training.max_epochs_per_phase);
    for (std::size_t e = 0; e + 1 < rows.size(); ++e) schedule_ok = schedule_ok && !want[e].stop;
  }
  o.expect(schedule_ok, "schedule log matches the scripted-loss oracle");
  o.expect(minutes <= 60, "runtime <= 60 min");
  o.detail << manifest.records.size() << " tiles, " << classes.size() << " classes; val mIoU " << fmt(miou, 4)
           << ", mean accuracy " << fmt(acc, 4) << "; " << log.size() << " epochs, " << decays << " lr decays, "
           << stops << " early stops; " << fmt(minutes, 3) << " min";
}

// ---------------------------------------------------------------- 12
void projection_check(Outcome& o) {
  Rng rng(12);
  std::vector<std::vector<double>> emb;
  std::vector<int> labels;
  std::array<std::vector<double>, 3> centers;
  for (auto& c : centers) {
    c.resize(64);
    for (auto& v : c) v = rng.normal() * 2.0;
  }
  for (int i = 0; i < 500; ++i) {
    const int k = i % 3;
    std::vector<double> e(64);
    for (std::size_t d = 0; d < 64; ++d) e[d] = centers[static_cast<std::size_t>(k)][d] + rng.normal() * (1.0 + 0.05 * d);
    e[7] = 3.0;  // a constant channel
    emb.push_back(e);
    labels.push_back(k);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto proj = project_latent_space(emb, ProjectionConfig{});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst_mean = 0, worst_var = 0;
  for (Eigen::Index c = 0; c < proj.standardized.cols(); ++c) {
    if (proj.constant_channel[static_cast<std::size_t>(c)]) continue;
    const double mean = proj.standardized.col(c).mean();
    const double var = (proj.standardized.col(c).array() - mean).square().mean();
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_var = std::max(worst_var, std::abs(var - 1));
  }
  const double s = silhouette_score(proj.coords, labels);
  o.expect(worst_mean <= 1e-9, "channel means 0");
  o.expect(worst_var <= 1e-6, "channel variances 1");
  o.expect(proj.reduced.cols() == 50, "PCA to 50 components");
  o.expect(s > 0.5, "silhouette > 0.5");
  o.detail << "max |mean| " << fmt(worst_mean, 2) << ", max |var-1| " << fmt(worst_var, 2) << ", silhouette "
           << fmt(s, 4) << " (" << fmt(secs, 3) << " s)";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"loss identities", loss_identities},
      {"gradient check", gradient_check},
      {"class weight and oversampling table", oversampling_table},
      {"point sampling vs closed form", sampling_closed_form},
      {"point sampling error ordering", sampling_ordering},
      {"tiling and stitching round trip", tiling_round_trip},
      {"evolutionary split", evolutionary_split_check},
      {"metrics vs brute-force tally", metrics_oracle},
      {"active learning selection", active_learning_check},
      {"succession", succession_check},
      {"end-to-end synthetic run", end_to_end},
      {"latent projection", projection_check},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << ": " << o.detail.str() << " ["
              << fmt(secs, 3) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
