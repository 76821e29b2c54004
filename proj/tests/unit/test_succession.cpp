#include <doctest.h>

#include <filesystem>

#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/succession.hpp"

using namespace foulseg;

namespace {

SegmentationMask row(std::vector<std::uint8_t> v) {
  const int w = static_cast<int>(v.size());
  return SegmentationMask(w, 1, std::move(v));
}

std::uint8_t bottom_of(std::vector<std::uint8_t> series) {
  std::vector<std::pair<std::string, SegmentationMask>> masks;
  for (std::size_t t = 0; t < series.size(); ++t) masks.emplace_back("2020-1" + std::to_string(t) + "-01", row({series[t]}));
  return direct_surface_attachment(build_layer_stack(masks)).bottom.at(0, 0);
}

}  // namespace

TEST_CASE("layer stack ordering and validation") {
  auto stack = build_layer_stack({{"2020-12-01", row({1})}, {"2020-10-01", row({2})}, {"2020-11-01", row({3})}}, "p");
  CHECK(stack.depth() == 3);
  CHECK(stack.timestamps == std::vector<std::string>{"2020-10-01", "2020-11-01", "2020-12-01"});
  CHECK(stack.layers[0].at(0, 0) == 2);
  CHECK(build_layer_stack({{"2021-01-01", row({0})}}).depth() == 1);
  try {
    build_layer_stack({{"2020-10-01", row({0})}, {"2020-10-01", row({1})}});
    FAIL("expected DuplicateDate");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DuplicateDate);
  }
  try {
    build_layer_stack({{"2020-10-01", row({0})}, {"2020-11-01", row({1, 2})}});
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("bottom layer rule") {
  CHECK(bottom_of({0, 1, 4}) == 4);
  CHECK(bottom_of({1, 1, 1}) == 1);
  CHECK(bottom_of({0, 7, 1}) == 7);
  CHECK(bottom_of({0, 0, 0}) == 0);
  CHECK(bottom_of({kIgnoreId, 0, 2}) == 2);
  CHECK(bottom_of({kIgnoreId, kIgnoreId}) == kIgnoreId);
  CHECK(bottom_of({7, 2}) == 7);
}

TEST_CASE("reset on bare option") {
  const auto stack = build_layer_stack({{"2020-10-01", row({7, 7})}, {"2020-11-01", row({0, 1})}, {"2020-12-01", row({2, 1})}});
  CHECK(direct_surface_attachment(stack).bottom == row({7, 7}));
  CHECK(direct_surface_attachment(stack, {true}).bottom == row({2, 7}));
}

TEST_CASE("depth-one attachment is the mask itself") {
  Rng rng(1);
  SegmentationMask m(6, 5);
  for (auto& v : m.labels()) v = static_cast<std::uint8_t>(rng.below(kNumClasses));
  const auto r = direct_surface_attachment(build_layer_stack({{"2020-10-01", m}}));
  CHECK(r.bottom == m);
  double sum = 0;
  for (double p : r.coverage.p) sum += p;
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("transition counts") {
  const auto stack = build_layer_stack({{"2020-10-01", row({1, 7})}, {"2020-11-01", row({7, 1})}});
  const auto m = transition_matrices(stack);
  REQUIRE(m.size() == 1);
  CHECK(m[0].counts[1][7] == 1);
  CHECK(m[0].counts[7][1] == 1);
  CHECK(m[0].total() == 2);
  CHECK(m[0].row_probs[1][7] == 1.0);

  const auto same = transition_matrices(build_layer_stack({{"2020-10-01", row({0, 3, 3})}, {"2020-11-01", row({0, 3, 3})}}));
  CHECK(same[0].counts[3][3] == 2);
  CHECK(same[0].row_probs[0][0] == 1.0);
  CHECK(same[0].row_probs[5][5] == 0.0);

  try {
    transition_matrices(build_layer_stack({{"2020-10-01", row({0})}}));
    FAIL("expected SingleFrame");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingleFrame);
  }
}

TEST_CASE("random stacks: brute-force tally, conservation and locality") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, SegmentationMask>> masks;
    for (int t = 0; t < 3; ++t) {
      SegmentationMask m(9, 7);
      for (auto& v : m.labels()) v = rng.bernoulli(0.1) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(4));
      masks.emplace_back("2021-0" + std::to_string(t + 1) + "-15", m);
    }
    const auto stack = build_layer_stack(masks);
    const auto mats = transition_matrices(stack);
    REQUIRE(mats.size() == 2);
    for (std::size_t t = 0; t < 2; ++t) {
      std::int64_t joint = 0;
      for (std::size_t i = 0; i < stack.layers[t].size(); ++i) {
        const auto a = stack.layers[t].labels()[i], b = stack.layers[t + 1].labels()[i];
        if (a != kIgnoreId && b != kIgnoreId) ++joint;
      }
      CHECK(mats[t].total() == joint);
      for (int a = 0; a < kNumClasses; ++a)
        for (int b = 0; b < kNumClasses; ++b) {
          std::int64_t n = 0;
          for (std::size_t i = 0; i < stack.layers[t].size(); ++i)
            n += stack.layers[t].labels()[i] == a && stack.layers[t + 1].labels()[i] == b;
          REQUIRE(mats[t].counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] == n);
        }
    }
    // left half plus right half equals the whole
    std::vector<std::pair<std::string, SegmentationMask>> left, right;
    for (std::size_t t = 0; t < 3; ++t) {
      SegmentationMask l(4, 7), r(5, 7);
      for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x) (x < 4 ? l.at(x, y) : r.at(x - 4, y)) = stack.layers[t].at(x, y);
      left.emplace_back(stack.timestamps[t], l);
      right.emplace_back(stack.timestamps[t], r);
    }
    const auto ml = transition_matrices(build_layer_stack(left));
    const auto mr = transition_matrices(build_layer_stack(right));
    for (std::size_t a = 0; a < kNumClasses; ++a)
      for (std::size_t b = 0; b < kNumClasses; ++b) REQUIRE(ml[1].counts[a][b] + mr[1].counts[a][b] == mats[1].counts[a][b]);
    const auto att = direct_surface_attachment(stack);
    double sum = 0;
    for (double p : att.coverage.p) sum += p;
    CHECK(sum == doctest::Approx(1.0));
  }
}

TEST_CASE("succession export") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "foulseg_succession";
  fs::remove_all(dir);

  // 200 pixels; class 5 holds one pixel (0.5%) in the first frame
  SegmentationMask a(20, 10, 0), b(20, 10, 1), c(20, 10, 4);
  a.labels()[0] = 5;
  for (int i = 0; i < 100; ++i) b.labels()[static_cast<std::size_t>(i)] = 7;
  const auto stack = build_layer_stack({{"2020-10-01", a}, {"2020-11-01", b}, {"2020-12-01", c}}, "demo");
  const auto mats = transition_matrices(stack);
  const auto report = direct_surface_attachment(stack);
  export_succession(stack, mats, report, dir);
  for (const char* f : {"coverage.csv", "attachment.csv", "bottom.png", "transitions.csv", "succession.json",
                        "stack/index.json", "stack/frame_002.png"})
    CHECK(fs::exists(dir / f));

  const auto j = read_json(dir / "succession.json");
  CHECK(j["panel_id"] == "demo");
  CHECK(j["timestamps"].size() == 3);
  bool has_five = false;
  for (const auto& n : j["nodes"]) {
    has_five = has_five || n["path"][0] == 5;
    if (n["path"].size() == 2) {
      const auto from = n["path"][0].get<std::size_t>(), to = n["path"][1].get<std::size_t>();
      CHECK(n["pixels"].get<std::int64_t>() == mats[0].counts[from][to]);
    }
  }
  CHECK_FALSE(has_five);
  const auto cov = csv::read(dir / "coverage.csv");
  bool csv_has_five = false;
  for (const auto& r : cov.rows) csv_has_five = csv_has_five || (r[1] == "5" && r[3] == "1");
  CHECK(csv_has_five);

  const auto back = load_layer_stack(dir / "stack");
  CHECK(back.layers == stack.layers);
  CHECK(back.timestamps == stack.timestamps);

  const auto single = dir / "single";
  const auto one = build_layer_stack({{"2020-10-01", a}});
  export_succession(one, {}, direct_surface_attachment(one), single);
  CHECK(fs::exists(single / "coverage.csv"));
  CHECK_FALSE(fs::exists(single / "transitions.csv"));
  CHECK_FALSE(fs::exists(single / "succession.json"));
}
