#include "foulseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "foulseg/error.hpp"

namespace foulseg {

RgbImage::RgbImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw Error(ErrorCode::InvalidGeometry, "negative image dimensions");
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, fill);
}

PlanarImage to_planar(const RgbImage& image) {
  PlanarImage out(image.width(), image.height(), 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < image.width(); ++x) out.at(x, y, c) = image.at(x, y, c);
  return out;
}

RgbImage to_rgb(const PlanarImage& image) {
  RgbImage out(image.width, image.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        const float v = std::round(image.at(x, y, image.channels == 1 ? 0 : c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
      }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngDecoded {
  int width = 0;
  int height = 0;
  int color_type = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// libpng reports errors by longjmp; nothing with a destructor may live in the
// frames between setjmp and the libpng calls below.
bool decode_png(std::FILE* file, bool expand_palette, PngDecoded& out, std::vector<png_bytep>& rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, file);
  png_read_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (bit_depth < 8) png_set_packing(png);
  if (expand_palette) {
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY || out.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  out.channels = png_get_channels(png, info);

  const auto row_bytes = png_get_rowbytes(png, info);
  out.pixels.resize(row_bytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) {
    rows[static_cast<std::size_t>(y)] = out.pixels.data() + row_bytes * static_cast<std::size_t>(y);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

PngDecoded read_png(const std::filesystem::path& path, bool expand_palette) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::MissingFile, path.string());
  PngDecoded out;
  std::vector<png_bytep> rows;
  if (!decode_png(file.get(), expand_palette, out, rows)) {
    throw Error(ErrorCode::UnreadableImage, "cannot decode PNG: " + path.string());
  }
  return out;
}

bool encode_png(std::FILE* file, int width, int height, int color_type, const std::uint8_t* pixels, int channels,
                const png_color* palette, int palette_size) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (palette) png_set_PLTE(png, info, palette, palette_size);
  png_write_info(png, info);
  const auto stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + stride * static_cast<std::size_t>(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               const std::uint8_t* pixels, int channels, bool with_palette) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<png_color> palette;
  if (with_palette) {
    palette.assign(256, png_color{0, 0, 0});
    for (const auto& c : ClassTaxonomy::standard().classes()) {
      palette[static_cast<std::size_t>(c.id)] = png_color{c.color[0], c.color[1], c.color[2]};
    }
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
  const bool ok = encode_png(file.get(), width, height, color_type, pixels, channels,
                             with_palette ? palette.data() : nullptr, static_cast<int>(palette.size()));
  if (!ok || std::fflush(file.get()) != 0) throw Error(ErrorCode::IoFailure, "cannot encode PNG: " + path.string());
}

}  // namespace

RgbImage load_rgb(const std::filesystem::path& path) {
  auto png = read_png(path, true);
  if (png.channels != 3) throw Error(ErrorCode::UnreadableImage, "expected RGB image: " + path.string());
  RgbImage image(png.width, png.height);
  std::copy(png.pixels.begin(), png.pixels.end(), image.data().begin());
  return image;
}

void save_rgb(const RgbImage& image, const std::filesystem::path& path) {
  if (image.empty()) throw Error(ErrorCode::IoFailure, "cannot save an empty image");
  write_png(path, image.width(), image.height(), PNG_COLOR_TYPE_RGB, image.data().data(), 3, false);
}

SegmentationMask load_mask(const std::filesystem::path& path) {
  auto png = read_png(path, false);
  if (png.channels != 1 ||
      (png.color_type != PNG_COLOR_TYPE_PALETTE && png.color_type != PNG_COLOR_TYPE_GRAY)) {
    throw Error(ErrorCode::UnreadableImage, "mask must be an 8-bit single-channel raster: " + path.string());
  }
  SegmentationMask mask(png.width, png.height, std::move(png.pixels));
  mask.validate();
  return mask;
}

void save_mask(const SegmentationMask& mask, const std::filesystem::path& path) {
  mask.validate();
  write_png(path, mask.width(), mask.height(), PNG_COLOR_TYPE_PALETTE, mask.labels().data(), 1, true);
}

}  // namespace foulseg
