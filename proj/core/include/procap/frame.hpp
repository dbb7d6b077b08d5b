#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace procap {

// RGB raster with values in [0,1], stored row-major as H x W x 3.
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  static constexpr int channels = 3;

  Frame() = default;
  Frame(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * channels, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Frame& other) const {
    return height == other.height && width == other.width;
  }

  bool operator==(const Frame& other) const = default;
};

struct FramePair {
  Frame before;
  Frame after;
};

// 8-bit quantization used by the PNG round trip.
std::vector<std::uint8_t> to_bytes(const Frame& frame);
Frame from_bytes(std::span<const std::uint8_t> bytes, int height, int width);

void write_png(const std::filesystem::path& path, const Frame& frame);
Frame read_png(const std::filesystem::path& path);

// Lays frames left to right with a 1px separator.
Frame contact_sheet(std::span<const Frame> frames);

}  // namespace procap
