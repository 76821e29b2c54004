#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "foulseg/error.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/training/augment.hpp"
#include "foulseg/training/metrics.hpp"
#include "foulseg/training/schedule.hpp"
#include "foulseg/training/trainer.hpp"

using namespace foulseg;

namespace {

struct ScriptedStep {
  double lr;
  bool decayed;
  bool stop;
};

// Replays a loss script from the full history rather than incremental counters.
std::vector<ScriptedStep> schedule_oracle(const std::vector<double>& losses, double lr, const ScheduleConfig& cfg) {
  std::vector<ScriptedStep> out;
  std::size_t last_ref = 0, last_reset = 0;  // epoch (1-based) of the last reference move / decay
  double ref = std::numeric_limits<double>::infinity();
  for (std::size_t e = 1; e <= losses.size(); ++e) {
    const double l = losses[e - 1];
    ScriptedStep s{lr, false, false};
    if (l < ref - cfg.improve_threshold) {
      ref = l;
      last_ref = e;
    } else if (e - std::max(last_ref, last_reset) >= static_cast<std::size_t>(cfg.patience)) {
      const double next = std::max(lr / cfg.decay_factor, cfg.lr_floor);
      s.decayed = next < lr;
      lr = next;
      last_reset = e;
    }
    std::size_t best_epoch = 1;
    for (std::size_t k = 1; k <= e; ++k)
      if (losses[k - 1] < losses[best_epoch - 1]) best_epoch = k;
    s.stop = e - best_epoch >= static_cast<std::size_t>(cfg.patience);
    out.push_back(s);
  }
  return out;
}

SegmentationMask random_mask(Rng& rng, int w, int h, int classes, double ignore = 0.0) {
  SegmentationMask m(w, h);
  for (auto& v : m.labels()) v = rng.bernoulli(ignore) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(classes));
  return m;
}

}  // namespace

TEST_CASE("plateau schedule hand-worked script") {
  ScheduleConfig cfg;
  cfg.patience = 2;
  PlateauSchedule s(1e-3, cfg);
  auto a = s.observe(1.0);
  CHECK(a.improved);
  CHECK_FALSE(a.decayed);
  auto b = s.observe(0.99995);  // strict best, but not past the threshold
  CHECK(b.improved);
  CHECK_FALSE(b.decayed);
  auto c = s.observe(0.99993);
  CHECK(c.improved);
  CHECK(c.decayed);
  CHECK(c.lr_used == doctest::Approx(1e-3));
  CHECK(s.lr() == doctest::Approx(2e-4));
  CHECK_FALSE(s.observe(0.5).stop);
  CHECK_FALSE(s.observe(0.6).stop);
  auto f = s.observe(0.7);
  CHECK(f.stop);
  CHECK(f.decayed);
  CHECK(s.lr() == doctest::Approx(4e-5));
}

TEST_CASE("plateau schedule matches the history oracle on random scripts") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ScheduleConfig cfg;
    cfg.patience = 1 + static_cast<int>(rng.below(6));
    cfg.decay_factor = 5.0;
    cfg.lr_floor = 1e-5;
    std::vector<double> losses;
    double level = 1.0;
    for (int e = 0; e < 80; ++e) {
      const auto r = rng.below(4);
      if (r == 0) level -= rng.uniform(0, 0.01);
      if (r == 1) level -= rng.uniform(0, 2e-4);  // near the threshold
      losses.push_back(r == 2 ? level + rng.uniform(0, 0.05) : level);
    }
    const auto want = schedule_oracle(losses, 1e-3, cfg);
    PlateauSchedule s(1e-3, cfg);
    for (std::size_t e = 0; e < losses.size(); ++e) {
      const auto got = s.observe(losses[e]);
      REQUIRE(got.lr_used == want[e].lr);
      REQUIRE(got.decayed == want[e].decayed);
      REQUIRE(got.stop == want[e].stop);
    }
  }
}

TEST_CASE("lr never drops below the floor") {
  ScheduleConfig cfg;
  cfg.patience = 1;
  cfg.lr_floor = 1e-6;
  PlateauSchedule s(1e-4, cfg);
  for (int i = 0; i < 20; ++i) s.observe(1.0);
  CHECK(s.lr() == doctest::Approx(1e-6));
}

TEST_CASE("flip and rotate are involutions") {
  Rng rng(2);
  RgbImage img(16, 16);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.below(256));
  auto mask = random_mask(rng, 16, 16, 4);
  auto i2 = img;
  auto m2 = mask;
  flip(i2, m2, true);
  CHECK_FALSE(i2 == img);
  flip(i2, m2, true);
  CHECK(i2 == img);
  CHECK(m2 == mask);
  rotate90(i2, m2, 1);
  CHECK(m2.at(0, 0) == mask.at(15, 0));
  rotate90(i2, m2, 3);
  CHECK(i2 == img);
  CHECK(m2 == mask);
}

TEST_CASE("augmentations keep image and mask aligned") {
  Rng rng(3);
  RgbImage img(32, 32);
  SegmentationMask mask(32, 32);
  // a pixel's colour encodes its class, so geometric ops must move both together
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const auto c = static_cast<std::uint8_t>((x / 8 + y / 8) % 3);
      mask.at(x, y) = c;
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = static_cast<std::uint8_t>(c * 100);
    }
  AugmentConfig cfg;
  cfg.ops = {AugmentOp::Flip, AugmentOp::Rotation};
  cfg.ops_per_sample = 2;
  for (int i = 0; i < 10; ++i) {
    auto a = img;
    auto m = mask;
    apply_augmentations(a, m, cfg, rng);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) REQUIRE(a.at(x, y, 0) == m.at(x, y) * 100);
  }
}

TEST_CASE("no ops leaves the sample unchanged") {
  Rng rng(4);
  RgbImage img(8, 8, 77);
  auto mask = random_mask(rng, 8, 8, 3);
  auto a = img;
  auto m = mask;
  AugmentConfig cfg;
  cfg.ops.clear();
  apply_augmentations(a, m, cfg, rng);
  CHECK(a == img);
  CHECK(m == mask);
}

TEST_CASE("class dropout removes exactly one present class") {
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    auto mask = random_mask(rng, 12, 12, 3);
    const auto before = class_histogram(mask);
    auto m = mask;
    const int dropped = class_dropout(m, rng);
    REQUIRE(dropped >= 0);
    const auto after = class_histogram(m);
    CHECK(after[static_cast<std::size_t>(dropped)] == 0);
    std::int64_t ignored = 0;
    for (auto v : m.labels()) ignored += v == kIgnoreId;
    CHECK(ignored == before[static_cast<std::size_t>(dropped)]);
  }
  SegmentationMask single(4, 4, 2);
  CHECK(class_dropout(single, rng) == -1);
}

TEST_CASE("photometric ops leave the mask alone and saturate") {
  RgbImage img(4, 4, 200);
  adjust_contrast(img, 1.0);
  CHECK(img.at(0, 0, 0) == 200);
  grayscale(img, 1.0);
  CHECK(img.at(1, 1, 1) == 200);
  shift_hue(img, 0.5);  // gray has no hue
  CHECK(img.at(2, 2, 2) == 200);
  RgbImage two(2, 1);
  two.at(0, 0, 0) = 0;
  two.at(1, 0, 0) = 255;
  adjust_contrast(two, 3.0);
  CHECK(two.at(0, 0, 0) == 0);
  CHECK(two.at(1, 0, 0) == 255);
}

TEST_CASE("metrics hand example") {
  SegmentationMask truth(4, 1, std::vector<std::uint8_t>{0, 0, 1, 1});
  SegmentationMask pred(4, 1, std::vector<std::uint8_t>{0, 1, 1, 1});
  std::vector<SegmentationMask> p{pred}, t{truth};
  const auto r = evaluate_metrics(p, t);
  REQUIRE(r.per_class[0]);
  REQUIRE(r.per_class[1]);
  CHECK(r.per_class[0]->iou == doctest::Approx(0.5));
  CHECK(r.per_class[1]->iou == doctest::Approx(2.0 / 3.0));
  CHECK(r.per_class[1]->precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.per_class[1]->recall == doctest::Approx(1.0));
  CHECK(r.per_class[0]->accuracy == doctest::Approx(0.75));
  CHECK(r.mean.iou == doctest::Approx((0.5 + 2.0 / 3.0) / 2));
  CHECK(r.pixel_accuracy == doctest::Approx(0.75));
  CHECK_FALSE(r.per_class[2]);
  CHECK(r.confusion[0][1] == 1);
}

TEST_CASE("metrics equal a brute-force tally") {
  Rng rng(8);
  std::vector<SegmentationMask> preds, truths;
  for (int i = 0; i < 20; ++i) {
    truths.push_back(random_mask(rng, 16, 16, 4, 0.05));
    preds.push_back(random_mask(rng, 16, 16, 5, 0.02));
  }
  const auto r = evaluate_metrics(preds, truths);
  std::array<double, kNumClasses> iou_sum{};
  std::array<int, kNumClasses> tiles{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int c = 0; c < kNumClasses; ++c) {
      std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
      bool present = false;
      for (std::size_t k = 0; k < preds[i].size(); ++k) {
        const int p = preds[i].labels()[k], t = truths[i].labels()[k];
        if (p == kIgnoreId || t == kIgnoreId) continue;
        present = present || p == c || t == c;
        tp += p == c && t == c;
        fp += p == c && t != c;
        fn += p != c && t == c;
        tn += p != c && t != c;
      }
      const auto& k = r.tile_counts[i][static_cast<std::size_t>(c)];
      REQUIRE(k.tp == tp);
      REQUIRE(k.fp == fp);
      REQUIRE(k.fn == fn);
      REQUIRE(k.tn == tn);
      if (present) {
        ++tiles[static_cast<std::size_t>(c)];
        iou_sum[static_cast<std::size_t>(c)] += tp + fp + fn > 0 ? static_cast<double>(tp) / (tp + fp + fn) : 0.0;
      }
    }
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CHECK(r.counting_tiles[c] == tiles[c]);
    if (tiles[c] > 0) CHECK(std::abs(r.per_class[c]->iou - iou_sum[c] / tiles[c]) < 1e-12);
  }
}

TEST_CASE("metrics input errors") {
  std::vector<SegmentationMask> a{SegmentationMask(2, 2)}, b{SegmentationMask(2, 2), SegmentationMask(2, 2)};
  CHECK_THROWS_AS(evaluate_metrics(a, b), Error);
  std::vector<SegmentationMask> c{SegmentationMask(3, 2)};
  try {
    evaluate_metrics(a, c);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("train config JSON round trip and validation") {
  TrainConfig c;
  c.batch_size = 4;
  c.schedule.patience = 7;
  c.phase2_unfreeze_stages = 1;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json({{"bogus", 1}}), Error);
  CHECK_THROWS_AS(TrainConfig::from_json({{"batch_size", 0}}), Error);
}

TEST_CASE("two-phase training on a tiny set") {
  auto cfg = nn::NetworkConfig::tiny();
  cfg.init_seed = 4;
  nn::SegNet<float> net(cfg);
  Rng rng(9);
  std::vector<TrainingSample> train, val;
  for (int i = 0; i < 6; ++i) {
    TrainingSample s;
    s.tile_id = "t" + std::to_string(i);
    s.image = RgbImage(64, 64);
    s.mask = SegmentationMask(64, 64);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const bool right = x >= 32;
        s.mask.at(x, y) = right ? 2 : 0;
        for (int ch = 0; ch < 3; ++ch) s.image.at(x, y, ch) = static_cast<std::uint8_t>((right ? 220 : 60) + rng.below(20));
      }
    (i < 4 ? train : val).push_back(s);
  }
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs_per_phase = 2;
  tc.schedule.patience = 5;
  tc.augmentation.ops.clear();
  int calls = 0;
  const auto result = train_two_phase(net, train, val, tc, [&](const EpochRecord&) { ++calls; });
  CHECK(result.log.size() == 4);
  CHECK(calls == 4);
  CHECK(result.log[0].phase == 1);
  CHECK(result.log[2].phase == 2);
  CHECK(result.log[2].lr == doctest::Approx(tc.phase2_lr));
  CHECK(std::isfinite(result.best_val_loss));
  CHECK(net.encoder_trainable_from() == 0);

  const auto path = std::filesystem::temp_directory_path() / "foulseg_log.csv";
  write_training_log(path, result.log);
  const auto back = read_training_log(path);
  REQUIRE(back.size() == result.log.size());
  CHECK(back[1].val_loss == result.log[1].val_loss);
  CHECK(back[3].phase == 2);

  CHECK_THROWS_AS(train_two_phase(net, {}, val, tc), Error);
  try {
    train_two_phase(net, train, {}, tc);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySplit);
  }
}
