// PNG read/write for RGB, 16-bit depth and mask images (OpenCV codecs).
#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sorec/frontend.hpp"
#include "sorec/image.hpp"

namespace sorec {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline const std::vector<int>& png_params() {
  static const std::vector<int> p{cv::IMWRITE_PNG_COMPRESSION, 6};
  return p;
}
inline void imwrite_or_throw(const std::string& path, const cv::Mat& m) {
  if (!cv::imwrite(path, m, png_params())) throw ImageIoError("cannot write image " + path);
}
inline cv::Mat imread_or_throw(const std::string& path, int flags) {
  if (!std::filesystem::exists(path)) throw ImageIoError("missing image file " + path);
  cv::Mat m = cv::imread(path, flags);
  if (m.empty()) throw ImageIoError("cannot decode image " + path);
  return m;
}
}  // namespace detail

inline void write_rgb_png(const std::string& path, const RgbImage& img) {
  if (img.channels != 3) throw ImageIoError("write_rgb_png needs a 3-channel image");
  cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      auto& px = m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      px[0] = img.at(x, y, 2), px[1] = img.at(x, y, 1), px[2] = img.at(x, y, 0);
    }
  detail::imwrite_or_throw(path, m);
}

inline RgbImage read_rgb_png(const std::string& path) {
  const cv::Mat m = detail::imread_or_throw(path, cv::IMREAD_COLOR);
  RgbImage img(static_cast<std::size_t>(m.cols), static_cast<std::size_t>(m.rows), 3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3b>(y, x);
      img.at(x, y, 0) = px[2], img.at(x, y, 1) = px[1], img.at(x, y, 2) = px[0];
    }
  return img;
}

inline void write_depth_png(const std::string& path, const DepthImage& img) {
  cv::Mat m(static_cast<int>(img.height), static_cast<int>(img.width), CV_16UC1);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) m.at<std::uint16_t>(static_cast<int>(y), static_cast<int>(x)) = img.at(x, y);
  detail::imwrite_or_throw(path, m);
}

inline DepthImage read_depth_png(const std::string& path) {
  const cv::Mat m = detail::imread_or_throw(path, cv::IMREAD_ANYDEPTH);
  if (m.type() != CV_16UC1) throw ImageIoError("depth image " + path + " is not 16-bit single channel");
  DepthImage img(static_cast<std::size_t>(m.cols), static_cast<std::size_t>(m.rows), 1);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) img.at(x, y) = m.at<std::uint16_t>(y, x);
  return img;
}

/// Row-normalized confusion matrix rendered with the hot colormap, each cell
/// drawn as a `cell` x `cell` block.
inline RgbImage render_confusion(const std::vector<std::vector<std::size_t>>& confusion, std::size_t cell = 16) {
  const std::size_t n = confusion.size();
  RgbImage img(std::max<std::size_t>(n, 1) * cell, std::max<std::size_t>(n, 1) * cell, 3);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t row = 0;
    for (std::size_t v : confusion[i]) row += v;
    for (std::size_t j = 0; j < confusion[i].size() && j < n; ++j) {
      const double u = row ? static_cast<double>(confusion[i][j]) / static_cast<double>(row) : 0.0;
      const auto rgb = hot_colormap(u);
      for (std::size_t y = i * cell; y < (i + 1) * cell; ++y)
        for (std::size_t x = j * cell; x < (j + 1) * cell; ++x)
          for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
    }
  }
  return img;
}

}  // namespace sorec
