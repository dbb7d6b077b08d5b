#include "procap/frame.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "procap/error.hpp"

namespace procap {

std::vector<std::uint8_t> to_bytes(const Frame& frame) {
  std::vector<std::uint8_t> out(frame.data.size());
  for (std::size_t i = 0; i < frame.data.size(); ++i) {
    const float v = std::clamp(frame.data[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Frame from_bytes(std::span<const std::uint8_t> bytes, int height, int width) {
  Frame frame(height, width);
  if (bytes.size() != frame.data.size()) {
    throw ShapeMismatchError("byte buffer does not match " + std::to_string(height) + "x" +
                             std::to_string(width) + "x3");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) frame.data[i] = bytes[i] / 255.0f;
  return frame;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Frame& frame) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw RuntimeFailure("cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("libpng init failed: " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("png write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, frame.width, frame.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed header; no timestamps so rebuilds are byte-identical.
  png_write_info(png, info);
  auto bytes = to_bytes(frame);
  for (int y = 0; y < frame.height; ++y) {
    png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * frame.width * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Frame read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw MissingArtifactError("cannot open image: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeFailure("libpng init failed: " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeFailure("png decode failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, bytes.data() + static_cast<std::size_t>(y) * width * 3, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_bytes(bytes, height, width);
}

Frame contact_sheet(std::span<const Frame> frames) {
  if (frames.empty()) return {};
  const int h = frames.front().height;
  const int w = frames.front().width;
  const int n = static_cast<int>(frames.size());
  Frame sheet(h, n * w + (n - 1), 1.0f);
  for (int i = 0; i < n; ++i) {
    if (!frames[i].same_shape(frames.front())) {
      throw ShapeMismatchError("contact sheet frames differ in size");
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) sheet.at(y, i * (w + 1) + x, c) = frames[i].at(y, x, c);
      }
    }
  }
  return sheet;
}

}  // namespace procap
