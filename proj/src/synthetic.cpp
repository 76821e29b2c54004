#include "foulseg/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "foulseg/config_util.hpp"
#include "foulseg/error.hpp"

namespace foulseg {

namespace {

// Unit directions scaled by 64, 16 headings.
constexpr std::array<std::array<int, 2>, 16> kHeadings{{{64, 0},
                                                         {59, 24},
                                                         {45, 45},
                                                         {24, 59},
                                                         {0, 64},
                                                         {-24, 59},
                                                         {-45, 45},
                                                         {-59, 24},
                                                         {-64, 0},
                                                         {-59, -24},
                                                         {-45, -45},
                                                         {-24, -59},
                                                         {0, -64},
                                                         {24, -59},
                                                         {45, -45},
                                                         {59, -24}}};

struct Disc {
  int x, y, r;
};

struct Segment {
  int x0, y0, x1, y1;
};

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), hit_(static_cast<std::size_t>(w) * h, 0) {}

  void disc(int cx, int cy, int r) {
    for (int y = std::max(0, cy - r); y <= std::min(h_ - 1, cy + r); ++y)
      for (int x = std::max(0, cx - r); x <= std::min(w_ - 1, cx + r); ++x) {
        const int dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r) hit_[static_cast<std::size_t>(y) * w_ + x] = 1;
      }
  }

  // Bresenham line stamped with a disc.
  void line(const Segment& s, int r) {
    int x = s.x0, y = s.y0;
    const int dx = std::abs(s.x1 - s.x0), dy = -std::abs(s.y1 - s.y0);
    const int sx = s.x0 < s.x1 ? 1 : -1, sy = s.y0 < s.y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      disc(x, y, r);
      if (x == s.x1 && y == s.y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y += sy;
      }
    }
  }

  std::vector<std::int64_t> pixels() const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < hit_.size(); ++i)
      if (hit_[i]) out.push_back(static_cast<std::int64_t>(i));
    return out;
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> hit_;
};

std::vector<Segment> branched_path(const ShapeSpec& s, Rng& rng) {
  struct Tip {
    int x, y, heading, depth;
  };
  std::vector<Segment> segs;
  std::vector<Tip> open{{s.x, s.y, static_cast<int>(rng.below(16)), 0}};
  const int max_segments = 10 + static_cast<int>(rng.below(8));
  std::size_t next = 0;
  while (next < open.size() && static_cast<int>(segs.size()) < max_segments) {
    Tip t = open[next++];
    const int len = std::max(2, s.size * (3 + static_cast<int>(rng.below(3))) / 4);
    const auto& d = kHeadings[static_cast<std::size_t>(t.heading)];
    const int nx = t.x + d[0] * len / 64, ny = t.y + d[1] * len / 64;
    segs.push_back({t.x, t.y, nx, ny});
    if (t.depth >= 4) continue;
    open.push_back({nx, ny, (t.heading + 16 + static_cast<int>(rng.below(3)) - 1) % 16, t.depth + 1});
    if (rng.below(100) < 55) open.push_back({nx, ny, (t.heading + 16 + (rng.below(2) ? 3 : -3)) % 16, t.depth + 1});
  }
  return segs;
}

std::vector<Segment> tube_path(const ShapeSpec& s, Rng& rng) {
  std::vector<Segment> segs;
  int x = s.x, y = s.y, heading = static_cast<int>(rng.below(16));
  const int n = 6 + static_cast<int>(rng.below(5));
  for (int i = 0; i < n; ++i) {
    const auto& d = kHeadings[static_cast<std::size_t>(heading)];
    const int nx = x + d[0] * s.size / 64, ny = y + d[1] * s.size / 64;
    segs.push_back({x, y, nx, ny});
    x = nx;
    y = ny;
    heading = (heading + 16 + static_cast<int>(rng.below(3)) - 1) % 16;
  }
  return segs;
}

std::vector<Disc> blob_discs(const ShapeSpec& s, Rng& rng) {
  if (s.lobes == 1) return {{s.x, s.y, s.size}};
  const int lobes = s.lobes > 1 ? s.lobes : 3 + static_cast<int>(rng.below(3));
  std::vector<Disc> out{{s.x, s.y, std::max(1, s.size * 3 / 4)}};
  const int spread = std::max(1, s.size / 2);
  for (int i = 1; i < lobes; ++i) {
    out.push_back({s.x + rng.range(-spread, spread), s.y + rng.range(-spread, spread),
                   std::max(1, rng.range(s.size / 2, s.size))});
  }
  return out;
}

std::vector<Disc> crust_discs(const ShapeSpec& s, Rng& rng) {
  std::vector<Disc> out;
  const int n = 6 + static_cast<int>(rng.below(7));
  for (int i = 0; i < n; ++i) {
    out.push_back({s.x + rng.range(-s.size, s.size), s.y + rng.range(-s.size, s.size),
                   std::max(2, rng.range(s.size / 3, s.size / 2))});
  }
  return out;
}

int noise(std::uint64_t seed, std::int64_t index, int channel, int amplitude) {
  if (amplitude <= 0) return 0;
  const auto h = mix64(seed ^ mix64(static_cast<std::uint64_t>(index) * 3 + static_cast<std::uint64_t>(channel)));
  return static_cast<int>(h % static_cast<std::uint64_t>(2 * amplitude + 1)) - amplitude;
}

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

bool is_organism(std::uint8_t c) {
  return c < kNumClasses && c != id(FoulingClass::Bare) && c != id(FoulingClass::Slime);
}

std::array<int, 3> read_color(const nlohmann::json& j, std::string_view section) {
  std::array<int, 3> c{};
  try {
    auto v = j.get<std::vector<int>>();
    if (v.size() != 3) throw Error(ErrorCode::ConfigError, std::string(section) + ": colour needs 3 entries");
    std::copy(v.begin(), v.end(), c.begin());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string(section) + ": " + e.what());
  }
  return c;
}

void check_class(int c, std::string_view section) {
  if (c < 0 || c >= kNumClasses) throw Error(ErrorCode::ConfigError, std::string(section) + ": class id out of range");
}

}  // namespace

std::string_view to_string(ShapeFamily f) noexcept {
  switch (f) {
    case ShapeFamily::Blob: return "blob";
    case ShapeFamily::Branched: return "branched";
    case ShapeFamily::Tube: return "tube";
    case ShapeFamily::Crust: return "crust";
  }
  return "?";
}

ShapeFamily parse_shape_family(std::string_view s) {
  if (s == "blob") return ShapeFamily::Blob;
  if (s == "branched") return ShapeFamily::Branched;
  if (s == "tube") return ShapeFamily::Tube;
  if (s == "crust") return ShapeFamily::Crust;
  throw Error(ErrorCode::ConfigError, "unknown shape family '" + std::string(s) + "'");
}

nlohmann::json ShapeSpec::to_json() const {
  return {{"class_id", class_id}, {"family", to_string(family)}, {"x", x},         {"y", y},
          {"size", size},         {"birth_frame", birth_frame}, {"seed", seed}, {"lobes", lobes}};
}

ShapeSpec ShapeSpec::from_json(const nlohmann::json& j) {
  constexpr std::string_view s = "synthetic.shapes";
  require_known_keys(j, {"class_id", "family", "x", "y", "size", "birth_frame", "seed", "lobes"}, s);
  ShapeSpec out;
  read_key(j, "class_id", out.class_id, s);
  check_class(out.class_id, s);
  std::string family = "blob";
  read_key(j, "family", family, s);
  out.family = parse_shape_family(family);
  read_key(j, "x", out.x, s);
  read_key(j, "y", out.y, s);
  read_key(j, "size", out.size, s);
  read_key(j, "birth_frame", out.birth_frame, s);
  read_key(j, "seed", out.seed, s);
  read_key(j, "lobes", out.lobes, s);
  if (out.size < 1 || out.birth_frame < 0) throw Error(ErrorCode::ConfigError, "synthetic.shapes: bad size/birth_frame");
  return out;
}

std::array<int, 3> SceneConfig::color_of(int class_id) const {
  for (const auto& st : styles)
    if (st.class_id == class_id) return st.color;
  const auto& c = ClassTaxonomy::standard().classes()[static_cast<std::size_t>(class_id)].color;
  return {c[0], c[1], c[2]};
}

int SceneConfig::texture_of(int class_id) const {
  for (const auto& st : styles)
    if (st.class_id == class_id) return st.texture;
  return 10;
}

SceneConfig SceneConfig::standard() {
  using F = ShapeFamily;
  SceneConfig c;
  auto style = [](FoulingClass k, F f, std::array<int, 3> col, int lo, int hi, int smin, int smax, int bmax) {
    ClassStyle s;
    s.class_id = id(k);
    s.family = f;
    s.color = col;
    s.texture = 12;
    s.min_count = lo;
    s.max_count = hi;
    s.min_size = smin;
    s.max_size = smax;
    s.birth_max = bmax;
    return s;
  };
  c.styles = {
      style(FoulingClass::Slime, F::Crust, {118, 108, 66}, 2, 4, 40, 70, 0),
      style(FoulingClass::EncrustingBryozoan, F::Crust, {214, 122, 48}, 1, 3, 18, 34, 1),
      style(FoulingClass::Barnacle, F::Blob, {226, 221, 204}, 3, 8, 6, 12, 2),
      style(FoulingClass::ColonialTunicate, F::Blob, {122, 58, 132}, 0, 2, 12, 22, 2),
      style(FoulingClass::CalcareousTubeworm, F::Branched, {244, 244, 236}, 2, 5, 10, 18, 2),
      style(FoulingClass::ArborescentBryozoan, F::Branched, {104, 66, 38}, 0, 2, 14, 24, 2),
      style(FoulingClass::SolitaryTunicate, F::Blob, {200, 150, 150}, 0, 2, 8, 14, 2),
      style(FoulingClass::Sponge, F::Blob, {222, 202, 58}, 0, 1, 10, 18, 2),
      style(FoulingClass::Cnidaria, F::Tube, {190, 52, 52}, 0, 2, 12, 20, 2),
  };
  return c;
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  constexpr std::string_view s = "synthetic.scene";
  require_known_keys(j,
                     {"width", "height", "background", "background_texture", "styles", "shapes", "growth_divisor",
                      "panel_id", "site", "start_date", "preset"},
                     s);
  SceneConfig c;
  if (j.contains("preset")) {
    if (j.at("preset") != "standard") throw Error(ErrorCode::ConfigError, "synthetic.scene.preset must be 'standard'");
    c = standard();
  }
  read_key(j, "width", c.width, s);
  read_key(j, "height", c.height, s);
  if (j.contains("background")) c.background = read_color(j.at("background"), s);
  read_key(j, "background_texture", c.background_texture, s);
  read_key(j, "growth_divisor", c.growth_divisor, s);
  read_key(j, "panel_id", c.panel_id, s);
  read_key(j, "site", c.site, s);
  read_key(j, "start_date", c.start_date, s);
  if (j.contains("styles")) {
    c.styles.clear();
    for (const auto& e : j.at("styles")) {
      constexpr std::string_view ss = "synthetic.styles";
      require_known_keys(e,
                         {"class_id", "family", "color", "texture", "min_count", "max_count", "min_size", "max_size",
                          "birth_min", "birth_max"},
                         ss);
      ClassStyle st;
      read_key(e, "class_id", st.class_id, ss);
      check_class(st.class_id, ss);
      std::string family = "blob";
      read_key(e, "family", family, ss);
      st.family = parse_shape_family(family);
      if (e.contains("color")) st.color = read_color(e.at("color"), ss);
      read_key(e, "texture", st.texture, ss);
      read_key(e, "min_count", st.min_count, ss);
      read_key(e, "max_count", st.max_count, ss);
      read_key(e, "min_size", st.min_size, ss);
      read_key(e, "max_size", st.max_size, ss);
      read_key(e, "birth_min", st.birth_min, ss);
      read_key(e, "birth_max", st.birth_max, ss);
      if (st.min_count < 0 || st.max_count < st.min_count || st.min_size < 1 || st.max_size < st.min_size ||
          st.birth_min < 0 || st.birth_max < st.birth_min) {
        throw Error(ErrorCode::ConfigError, "synthetic.styles: inconsistent ranges");
      }
      c.styles.push_back(st);
    }
  }
  if (j.contains("shapes")) {
    c.shapes.clear();
    for (const auto& e : j.at("shapes")) c.shapes.push_back(ShapeSpec::from_json(e));
  }
  if (c.width < 1 || c.height < 1 || c.growth_divisor < 1) {
    throw Error(ErrorCode::ConfigError, "synthetic.scene: width, height and growth_divisor must be >= 1");
  }
  add_months(c.start_date, 0);
  return c;
}

nlohmann::json SceneConfig::to_json() const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : styles) {
    st.push_back({{"class_id", s.class_id},
                  {"family", to_string(s.family)},
                  {"color", s.color},
                  {"texture", s.texture},
                  {"min_count", s.min_count},
                  {"max_count", s.max_count},
                  {"min_size", s.min_size},
                  {"max_size", s.max_size},
                  {"birth_min", s.birth_min},
                  {"birth_max", s.birth_max}});
  }
  nlohmann::json sh = nlohmann::json::array();
  for (const auto& s : shapes) sh.push_back(s.to_json());
  return {{"width", width},
          {"height", height},
          {"background", background},
          {"background_texture", background_texture},
          {"styles", st},
          {"shapes", sh},
          {"growth_divisor", growth_divisor},
          {"panel_id", panel_id},
          {"site", site},
          {"start_date", start_date}};
}

nlohmann::json GroundTruthLedger::to_json() const {
  nlohmann::json sh = nlohmann::json::array();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto e = shapes[i].to_json();
    e["id"] = i;
    std::vector<std::int64_t> own, vis;
    for (std::size_t f = 0; f < dates.size(); ++f) {
      own.push_back(own_pixels[f][i]);
      vis.push_back(visible_pixels[f][i]);
    }
    e["own_pixels"] = own;
    e["visible_pixels"] = vis;
    sh.push_back(e);
  }
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : events) {
    ev.push_back({{"frame", e.frame}, {"over_shape", e.over_shape}, {"under_shape", e.under_shape}, {"pixels", e.pixels}});
  }
  const auto hist = class_histogram(attachment);
  return {{"dates", dates},
          {"shapes", sh},
          {"overgrowth_events", ev},
          {"attachment_pixels", hist},
          {"width", attachment.width()},
          {"height", attachment.height()}};
}

std::vector<std::int64_t> rasterize_shape(const ShapeSpec& shape, int age, int growth_divisor, int width, int height) {
  if (age < 0) return {};
  Canvas canvas(width, height);
  Rng rng(shape.seed);
  const auto grow = [&](int r) { return r * (growth_divisor + age) / growth_divisor; };
  switch (shape.family) {
    case ShapeFamily::Blob:
      for (const auto& d : blob_discs(shape, rng)) canvas.disc(d.x, d.y, grow(d.r));
      break;
    case ShapeFamily::Crust:
      for (const auto& d : crust_discs(shape, rng)) canvas.disc(d.x, d.y, grow(d.r));
      break;
    case ShapeFamily::Branched:
    case ShapeFamily::Tube: {
      const auto segs = shape.family == ShapeFamily::Branched ? branched_path(shape, rng) : tube_path(shape, rng);
      const int total = static_cast<int>(segs.size());
      const int step = std::max(1, total / 4);
      const int visible = std::min(total, std::max(1, total / 2) + age * step);
      const int radius = shape.family == ShapeFamily::Branched ? 1 : 2;
      for (int i = 0; i < visible; ++i) canvas.line(segs[static_cast<std::size_t>(i)], radius);
      break;
    }
  }
  return canvas.pixels();
}

std::vector<ShapeSpec> resolve_shapes(const SceneConfig& config, Rng& rng) {
  std::vector<ShapeSpec> out;
  for (const auto& st : config.styles) {
    const int count = rng.range(st.min_count, st.max_count);
    for (int i = 0; i < count; ++i) {
      ShapeSpec s;
      s.class_id = st.class_id;
      s.family = st.family;
      s.x = rng.range(0, config.width - 1);
      s.y = rng.range(0, config.height - 1);
      s.size = rng.range(st.min_size, st.max_size);
      s.birth_frame = rng.range(st.birth_min, st.birth_max);
      s.seed = rng.next();
      out.push_back(s);
    }
  }
  out.insert(out.end(), config.shapes.begin(), config.shapes.end());
  std::stable_sort(out.begin(), out.end(), [](const ShapeSpec& a, const ShapeSpec& b) { return a.birth_frame < b.birth_frame; });
  return out;
}

SyntheticSeries generate_series(const SceneConfig& config, int frames, Rng& rng) {
  if (frames < 1) throw Error(ErrorCode::InvalidConfig, "synthetic series needs at least one frame");
  const int w = config.width, h = config.height;
  const auto npix = static_cast<std::size_t>(w) * h;
  SyntheticSeries series;
  auto& ledger = series.ledger;
  ledger.shapes = resolve_shapes(config, rng);
  const std::uint64_t texture_seed = rng.next();
  const auto nshapes = ledger.shapes.size();
  ledger.attachment = SegmentationMask(w, h, id(FoulingClass::Bare));
  std::vector<std::uint8_t> settled(npix, 0);

  for (int f = 0; f < frames; ++f) {
    std::vector<int> owner(npix, -1);
    std::vector<std::int64_t> own(nshapes, 0), visible(nshapes, 0);
    std::map<std::pair<int, int>, std::int64_t> covers;
    for (std::size_t s = 0; s < nshapes; ++s) {
      const auto& shape = ledger.shapes[s];
      const auto px = rasterize_shape(shape, f - shape.birth_frame, config.growth_divisor, w, h);
      own[s] = static_cast<std::int64_t>(px.size());
      for (auto i : px) {
        auto& o = owner[static_cast<std::size_t>(i)];
        if (o >= 0) ++covers[{static_cast<int>(s), o}];
        o = static_cast<int>(s);
      }
    }
    SyntheticFrame frame;
    frame.date = add_months(config.start_date, f);
    frame.mask = SegmentationMask(w, h, id(FoulingClass::Bare));
    frame.image.pixels = RgbImage(w, h);
    frame.image.panel_id = config.panel_id;
    frame.image.site = config.site;
    frame.image.capture_date = frame.date;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto i = static_cast<std::size_t>(y) * w + x;
        const int o = owner[i];
        std::array<int, 3> color = config.background;
        int texture = config.background_texture;
        std::uint64_t salt = texture_seed;
        if (o >= 0) {
          const auto& shape = ledger.shapes[static_cast<std::size_t>(o)];
          ++visible[static_cast<std::size_t>(o)];
          frame.mask.at(x, y) = static_cast<std::uint8_t>(shape.class_id);
          color = config.color_of(shape.class_id);
          texture = config.texture_of(shape.class_id);
          salt ^= shape.seed;
        }
        for (int c = 0; c < 3; ++c) {
          frame.image.pixels.at(x, y, c) =
              clamp_byte(color[static_cast<std::size_t>(c)] + noise(salt, static_cast<std::int64_t>(i), c, texture));
        }
        const auto label = frame.mask.at(x, y);
        if (!settled[i] && is_organism(label)) {
          ledger.attachment.at(x, y) = label;
          settled[i] = 1;
        } else if (!settled[i] && label == id(FoulingClass::Slime)) {
          ledger.attachment.at(x, y) = label;
        }
      }
    for (const auto& [pair, n] : covers) ledger.events.push_back({f, pair.first, pair.second, n});
    ledger.own_pixels.push_back(std::move(own));
    ledger.visible_pixels.push_back(std::move(visible));
    ledger.dates.push_back(frame.date);
    series.frames.push_back(std::move(frame));
  }
  return series;
}

std::pair<PanelImage, SegmentationMask> generate_panel(const SceneConfig& config, Rng& rng) {
  auto series = generate_series(config, 1, rng);
  return {std::move(series.frames[0].image), std::move(series.frames[0].mask)};
}

std::string add_months(const std::string& iso_date, int months) {
  int y = 0, m = 0, d = 0;
  char tail = 0;
  if (std::sscanf(iso_date.c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &tail) != 3 || m < 1 || m > 12 || d < 1 || d > 31) {
    throw Error(ErrorCode::ConfigError, "not an ISO date (YYYY-MM-DD): " + iso_date);
  }
  const int total = y * 12 + (m - 1) + months;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", total / 12, total % 12 + 1, std::min(d, 28));
  return buf;
}

}  // namespace foulseg
