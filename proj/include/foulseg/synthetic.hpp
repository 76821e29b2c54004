#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "foulseg/image.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/taxonomy.hpp"

namespace foulseg {

enum class ShapeFamily { Blob, Branched, Tube, Crust };

std::string_view to_string(ShapeFamily f) noexcept;
ShapeFamily parse_shape_family(std::string_view s);

/// One placed shape. `size` is a radius for blobs/crusts and a segment length for branched/tube shapes.
struct ShapeSpec {
  int class_id = 0;
  ShapeFamily family = ShapeFamily::Blob;
  int x = 0;
  int y = 0;
  int size = 8;
  int birth_frame = 0;
  std::uint64_t seed = 0;
  int lobes = 0;  // blobs only; 0 draws 3..5 lobes, 1 gives a plain disc

  nlohmann::json to_json() const;
  static ShapeSpec from_json(const nlohmann::json& j);
};

/// Random placement rule for one class.
struct ClassStyle {
  int class_id = 0;
  ShapeFamily family = ShapeFamily::Blob;
  std::array<int, 3> color{128, 128, 128};
  int texture = 10;  // +- per-pixel noise amplitude
  int min_count = 0;
  int max_count = 0;
  int min_size = 8;
  int max_size = 24;
  int birth_min = 0;
  int birth_max = 0;
};

struct SceneConfig {
  int width = 512;
  int height = 416;
  std::array<int, 3> background{150, 150, 146};
  int background_texture = 10;
  std::vector<ClassStyle> styles;
  std::vector<ShapeSpec> shapes;  // placed verbatim, after the random ones
  int growth_divisor = 4;         // linear growth: size * (divisor + age) / divisor
  std::string panel_id = "synthetic";
  std::string site = "synthetic";
  std::string start_date = "2020-10-01";

  /// Colours for classes without a style (explicit shapes of unstyled classes).
  std::array<int, 3> color_of(int class_id) const;
  int texture_of(int class_id) const;

  static SceneConfig standard();
  static SceneConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct OvergrowthEvent {
  int frame = 0;
  int over_shape = 0;
  int under_shape = 0;
  std::int64_t pixels = 0;
};

/// Ground truth recorded while rendering a series.
struct GroundTruthLedger {
  std::vector<ShapeSpec> shapes;  // index = shape id, in painting order
  std::vector<std::string> dates;
  std::vector<std::vector<std::int64_t>> own_pixels;      // [frame][shape] raster size
  std::vector<std::vector<std::int64_t>> visible_pixels;  // [frame][shape] pixels on top
  std::vector<OvergrowthEvent> events;
  /// Per pixel: class of the first organism (not bare/slime) ever on top; slime if only slime was seen; else bare.
  SegmentationMask attachment;

  nlohmann::json to_json() const;
};

struct SyntheticFrame {
  std::string date;
  PanelImage image;
  SegmentationMask mask;
};

struct SyntheticSeries {
  std::vector<SyntheticFrame> frames;
  GroundTruthLedger ledger;
};

/// Pixel indices (y * width + x) covered by a shape at the given age, clipped to the panel.
std::vector<std::int64_t> rasterize_shape(const ShapeSpec& shape, int age, int growth_divisor, int width, int height);

/// Random shapes from the styles followed by the explicit shapes, in painting order.
std::vector<ShapeSpec> resolve_shapes(const SceneConfig& config, Rng& rng);

std::pair<PanelImage, SegmentationMask> generate_panel(const SceneConfig& config, Rng& rng);
SyntheticSeries generate_series(const SceneConfig& config, int frames, Rng& rng);

/// ISO date plus whole months (day clamped to 28).
std::string add_months(const std::string& iso_date, int months);

}  // namespace foulseg
