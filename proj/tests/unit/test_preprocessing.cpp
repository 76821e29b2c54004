#include <doctest.h>

#include "foulseg/error.hpp"
#include "foulseg/preprocessing.hpp"
#include "foulseg/rng.hpp"

using namespace foulseg;

TEST_CASE("border crop box") {
  PreprocessConfig c;
  auto b = border_crop_box(1000, 1000, c);
  CHECK(b.x0 == 10);
  CHECK(b.x1 == 990);
  CHECK(b.y0 == 125);
  CHECK(b.y1 == 875);
  CHECK(b.width() == 980);
  CHECK(b.height() == 750);
}

TEST_CASE("preprocess panel output size") {
  PreprocessConfig c;
  c.format = PanelFormat::Small;
  PanelImage raw;
  raw.pixels = RgbImage(300, 520, 90);
  for (int y = 0; y < 520; ++y)
    for (int x = 0; x < 300; ++x) raw.pixels.at(x, y, 1) = static_cast<std::uint8_t>((x + y) % 256);
  auto out = preprocess_panel(raw, c);
  CHECK(out.pixels.width() == 1472);
  CHECK(out.pixels.height() == 2752);

  c.format.reset();
  CHECK_THROWS_AS(preprocess_panel(raw, c), Error);
}

TEST_CASE("constant image survives enhancement") {
  PlanarImage img(16, 16, 3);
  std::fill(img.data.begin(), img.data.end(), 128.0f);
  contrast_stretch(img, 0.25);
  unsharp_mask(img, 1, 1.0);
  for (float v : img.data) CHECK(v == doctest::Approx(128.0f));
}

TEST_CASE("contrast stretch maps tails to the full range") {
  PlanarImage img(100, 1, 1);
  for (int x = 0; x < 100; ++x) img.at(x, 0, 0) = static_cast<float>(50 + x);
  contrast_stretch(img, 0.25);
  CHECK(img.at(0, 0, 0) == doctest::Approx(0.0f));
  CHECK(img.at(99, 0, 0) == doctest::Approx(255.0f));
  for (int x = 1; x < 100; ++x) CHECK(img.at(x, 0, 0) >= img.at(x - 1, 0, 0));
}

TEST_CASE("tile offsets") {
  CHECK(tile_offsets(1472, 384, 64) == std::vector<int>{0, 320, 640, 960, 1088});
  CHECK(tile_offsets(384, 384, 64) == std::vector<int>{0});
  auto rows = tile_offsets(2752, 384, 64);
  CHECK(rows.size() == 9);
  CHECK(rows.back() == 2368);
  CHECK_THROWS_AS(tile_offsets(1000, 64, 64), Error);
}

TEST_CASE("downsample") {
  SegmentationMask m(2, 2, {0, 0, 1, 1});
  auto d = downsample(m, 2);
  CHECK(d.width() == 1);
  CHECK(d.at(0, 0) == 0);
  CHECK(downsample(m, 1) == m);
  CHECK_THROWS_AS(downsample(SegmentationMask(3, 3, 0), 2), Error);
  RgbImage img(4, 4, 10);
  img.at(0, 0, 0) = 50;
  auto small = downsample(img, 2);
  CHECK(small.width() == 2);
  CHECK(small.at(0, 0, 0) == 20);
  CHECK(small.at(1, 1, 0) == 10);
}

TEST_CASE("stitch") {
  SUBCASE("two overlapping tiles tie toward class 0") {
    ProbabilityField a(4, 4), b(4, 4);
    for (int i = 0; i < 16; ++i) {
      a.probs[static_cast<std::size_t>(i) * 10] = 1.0f;
      b.probs[static_cast<std::size_t>(i) * 10 + 1] = 1.0f;
    }
    auto [field, mask] = stitch_probabilities({{{0, 0, 4}, a}, {{2, 0, 4}, b}}, 6, 4);
    CHECK(field.pixel(3, 0)[0] == doctest::Approx(0.5f));
    CHECK(field.pixel(3, 0)[1] == doctest::Approx(0.5f));
    CHECK(mask.at(3, 0) == 0);
    CHECK(mask.at(5, 0) == 1);
  }
  SUBCASE("gap") {
    ProbabilityField a(4, 4);
    try {
      stitch_probabilities({{{0, 0, 4}, a}}, 6, 4);
      FAIL("expected CoverageGap");
    } catch (const CoverageGap& e) {
      CHECK(e.x() == 4);
      CHECK(e.y() == 0);
    }
  }
  SUBCASE("round trip on random panels") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
      const int w = rng.range(40, 130), h = rng.range(40, 130);
      SegmentationMask m(w, h);
      for (auto& v : m.labels()) v = static_cast<std::uint8_t>(rng.below(10));
      std::vector<std::pair<TileGeometry, ProbabilityField>> tiles;
      for (auto& [g, t] : tile_panel(m, 32, 8)) tiles.emplace_back(g, ProbabilityField::one_hot(t));
      CHECK(stitch_probabilities(tiles, w, h).second == m);
    }
  }
  SUBCASE("panel smaller than tile is reflect padded") {
    SegmentationMask m(20, 10, 3);
    auto tiles = tile_panel(m, 32, 8);
    REQUIRE(tiles.size() == 1);
    CHECK(tiles[0].second.width() == 32);
  }
}

TEST_CASE("upsample preserves constant fields") {
  auto u = upsample(ProbabilityField::uniform(3, 3), 2);
  CHECK(u.width == 6);
  for (float p : u.probs) CHECK(p == doctest::Approx(0.1f));
}
