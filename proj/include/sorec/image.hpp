// Interleaved row-major images (H x W x C).
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sorec {

template <class T>
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, T fill = T{})
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  T& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  const T& at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return data[(y * width + x) * channels + c];
  }
  std::size_t pixels() const { return width * height; }
  bool empty() const { return data.empty(); }
  template <class U>
  bool same_grid(const Image<U>& o) const {
    return width == o.width && height == o.height;
  }
  bool operator==(const Image&) const = default;
};

using RgbImage = Image<std::uint8_t>;     // 3 channels
using DepthImage = Image<std::uint16_t>;  // millimeters, 0 = invalid
using Mask = Image<std::uint8_t>;         // 1 channel, 0/1
using FlowField = Image<double>;          // 3 channels, meters per frame
using ScalarField = Image<double>;        // 1 channel

struct RgbdFrame {
  RgbImage rgb;
  DepthImage depth;
  std::size_t timestamp = 0;

  bool operator==(const RgbdFrame&) const = default;
};

inline void require_same_grid(const RgbdFrame& f) {
  if (!f.rgb.same_grid(f.depth) || f.rgb.channels != 3)
    throw std::invalid_argument("RGB and depth images are not registered on the same grid");
}

}  // namespace sorec
