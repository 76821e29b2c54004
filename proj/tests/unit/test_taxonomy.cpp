#include <doctest.h>

#include <filesystem>
#include <vector>

#include <png.h>

#include "foulseg/error.hpp"
#include "foulseg/image.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/taxonomy.hpp"

using namespace foulseg;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "foulseg_taxonomy";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("standard taxonomy order") {
  const auto& t = ClassTaxonomy::standard();
  REQUIRE(t.classes().size() == 10);
  CHECK(t.classes()[0].name == "bare");
  CHECK(t.classes()[1].name == "slime");
  CHECK(t.classes()[7].name == "calcareous tubeworm");
  CHECK(t.classes()[9].name == "cnidaria");
  for (int i = 0; i < 10; ++i) CHECK(t.classes()[static_cast<std::size_t>(i)].id == i);
  CHECK(kIgnoreId == 255);
}

TEST_CASE("class distribution") {
  CHECK(class_distribution(SegmentationMask(2, 2, {0, 0, 1, 1})).p[0] == 0.5);
  CHECK(class_distribution(SegmentationMask(2, 2, {0, 0, 0, 255})).p[0] == 1.0);
  SegmentationMask m(10, 10, 0);
  for (int i = 0; i < 37; ++i) m.at(i % 10, i / 10) = 1;
  auto d = class_distribution(m);
  CHECK(d.p[0] == doctest::Approx(0.63));
  CHECK(d.p[1] == doctest::Approx(0.37));
  CHECK_THROWS_AS(class_distribution(SegmentationMask(2, 2, kIgnoreId)), Error);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    SegmentationMask r(13, 7);
    for (auto& v : r.labels()) v = rng.bernoulli(0.1) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(10));
    auto p = class_distribution(r).p;
    double s = 0;
    for (double v : p) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
    // relabel c -> 9 - c permutes the distribution
    SegmentationMask q = r;
    for (auto& v : q.labels())
      if (v != kIgnoreId) v = static_cast<std::uint8_t>(9 - v);
    auto pq = class_distribution(q).p;
    for (int c = 0; c < 10; ++c) CHECK(pq[static_cast<std::size_t>(9 - c)] == p[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("mask io") {
  SUBCASE("round trip") {
    Rng rng(8);
    SegmentationMask m(64, 64);
    for (auto& v : m.labels()) v = rng.bernoulli(0.05) ? kIgnoreId : static_cast<std::uint8_t>(rng.below(10));
    save_mask(m, scratch("rt.png"));
    CHECK(load_mask(scratch("rt.png")) == m);
  }
  SUBCASE("all zero and all ignore") {
    save_mask(SegmentationMask(4, 4, 0), scratch("zero.png"));
    auto z = load_mask(scratch("zero.png"));
    for (auto v : z.labels()) CHECK(v == 0);
    save_mask(SegmentationMask(2, 2, kIgnoreId), scratch("ign.png"));
    auto g = load_mask(scratch("ign.png"));
    for (auto v : g.labels()) CHECK(v == 255);
  }
  SUBCASE("illegal value") {
    std::vector<std::uint8_t> gray(9, 3);
    gray[5] = 12;  // x = 2, y = 1
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = 3;
    img.height = 3;
    img.format = PNG_FORMAT_GRAY;
    REQUIRE(png_image_write_to_file(&img, scratch("bad.png").c_str(), 0, gray.data(), 3, nullptr) != 0);
    try {
      load_mask(scratch("bad.png"));
      FAIL("expected IllegalLabelValue");
    } catch (const IllegalLabelValue& e) {
      CHECK(e.value() == 12);
      CHECK(e.x() == 2);
      CHECK(e.y() == 1);
    }
    SegmentationMask bad(3, 3, 9);
    bad.labels()[4] = 12;
    CHECK_THROWS_AS(save_mask(bad, scratch("bad2.png")), IllegalLabelValue);
  }
  SUBCASE("missing file and zero width") {
    CHECK_THROWS_AS(load_mask(scratch("nope.png")), Error);
    CHECK_THROWS_AS(save_mask(SegmentationMask(0, 4, 0), scratch("empty.png")), Error);
  }
}
