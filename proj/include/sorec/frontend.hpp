// RGB-D visual front-end: volume-of-interest filtering, centered cropping,
// HSV tablecloth/skin segmentation, hot-colormap depth colorization, and the
// accumulated 3D hand-flow magnitude template.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sorec/image.hpp"

namespace sorec {

struct Box3 {
  std::array<double, 3> min{};
  std::array<double, 3> max{};
  /// Closed on every face.
  bool contains(double x, double y, double z) const {
    return x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1] && z >= min[2] && z <= max[2];
  }
};

struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Box3 voi;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
    for (int a = 0; a < 3; ++a)
      if (!(voi.min[a] < voi.max[a])) throw std::invalid_argument("volume of interest must satisfy min < max");
  }

  /// Camera-frame point (meters) of pixel (u, v) at depth `mm`.
  std::array<double, 3> backproject(std::size_t u, std::size_t v, std::uint16_t mm) const {
    const double z = static_cast<double>(mm) / 1000.0;
    return {(static_cast<double>(u) - cx) * z / fx, (static_cast<double>(v) - cy) * z / fy, z};
  }

  /// Intrinsics for a sub-window whose top-left corner is (ox, oy).
  CameraModel cropped(std::size_t ox, std::size_t oy) const {
    CameraModel c = *this;
    c.cx -= static_cast<double>(ox);
    c.cy -= static_cast<double>(oy);
    return c;
  }
};

struct HueInterval {
  double lo = 0.0, hi = 360.0;  // degrees, inclusive
  bool contains(double h) const { return h >= lo && h <= hi; }
};

struct SegmentationThresholds {
  HueInterval cloth_hue{90.0, 150.0};
  double cloth_sat_min = 0.3;
  std::vector<HueInterval> skin_hue{{0.0, 50.0}, {340.0, 360.0}};
  double skin_sat_lo = 0.2, skin_sat_hi = 0.7;
  double skin_val_min = 0.35;
};

struct ColorizationRange {
  double d_min = 0.0, d_max = 1.0;  // millimeters
};

struct Hsv {
  double h = 0.0;  // degrees in [0, 360)
  double s = 0.0;  // [0, 1]
  double v = 0.0;  // [0, 1]
};

/// Hexcone RGB -> HSV.
inline Hsv rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0.0 ? d / mx : 0.0;
  if (d > 0.0) {
    double h;
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    h *= 60.0;
    if (h < 0.0) h += 360.0;
    out.h = h >= 360.0 ? h - 360.0 : h;
  }
  return out;
}

/// Zeroes RGB and depth of every pixel whose backprojected point is outside
/// the volume of interest or whose depth is invalid.
inline RgbdFrame voi_filter(const RgbdFrame& frame, const CameraModel& cam) {
  require_same_grid(frame);
  RgbdFrame out = frame;
  for (std::size_t v = 0; v < frame.depth.height; ++v)
    for (std::size_t u = 0; u < frame.depth.width; ++u) {
      const std::uint16_t d = frame.depth.at(u, v);
      bool keep = d != 0;
      if (keep) {
        const auto p = cam.backproject(u, v, d);
        keep = cam.voi.contains(p[0], p[1], p[2]);
      }
      if (!keep) {
        out.depth.at(u, v) = 0;
        for (std::size_t c = 0; c < 3; ++c) out.rgb.at(u, v, c) = 0;
      }
    }
  return out;
}

struct CropWindow {
  std::size_t x = 0, y = 0, side = 0;
};

inline CropWindow center_window(std::size_t width, std::size_t height, std::size_t side) {
  if (side == 0 || side > width || side > height)
    throw std::invalid_argument("crop side " + std::to_string(side) + " does not fit a " + std::to_string(width) +
                                "x" + std::to_string(height) + " frame");
  return {(width - side) / 2, (height - side) / 2, side};
}

template <class T>
Image<T> crop(const Image<T>& img, const CropWindow& w) {
  if (w.x + w.side > img.width || w.y + w.side > img.height) throw std::invalid_argument("crop window out of bounds");
  Image<T> out(w.side, w.side, img.channels);
  for (std::size_t y = 0; y < w.side; ++y)
    std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(((w.y + y) * img.width + w.x) * img.channels),
                w.side * img.channels, out.data.begin() + static_cast<std::ptrdiff_t>(y * w.side * img.channels));
  return out;
}

inline RgbdFrame crop_center(const RgbdFrame& frame, std::size_t side) {
  require_same_grid(frame);
  const CropWindow w = center_window(frame.depth.width, frame.depth.height, side);
  return {crop(frame.rgb, w), crop(frame.depth, w), frame.timestamp};
}

struct SegmentationMasks {
  Mask object;
  Mask hand;
};

/// Tablecloth pixels go to neither mask; of the remaining valid-depth pixels,
/// skin-toned ones form the hand mask and the rest the object mask.
inline SegmentationMasks hsv_segment(const RgbdFrame& frame, const SegmentationThresholds& th) {
  require_same_grid(frame);
  const std::size_t W = frame.rgb.width, H = frame.rgb.height;
  SegmentationMasks m{Mask(W, H, 1), Mask(W, H, 1)};
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (frame.depth.at(x, y) == 0) continue;
      const Hsv c = rgb_to_hsv(frame.rgb.at(x, y, 0), frame.rgb.at(x, y, 1), frame.rgb.at(x, y, 2));
      if (th.cloth_hue.contains(c.h) && c.s >= th.cloth_sat_min) continue;
      const bool skin_hue = std::any_of(th.skin_hue.begin(), th.skin_hue.end(),
                                        [&](const HueInterval& iv) { return iv.contains(c.h); });
      const bool skin = skin_hue && c.s >= th.skin_sat_lo && c.s <= th.skin_sat_hi && c.v >= th.skin_val_min;
      (skin ? m.hand : m.object).at(x, y) = 1;
    }
  return m;
}

/// Hot colormap for u in [0,1]: black -> red -> yellow -> white.
inline std::array<std::uint8_t, 3> hot_colormap(double u) {
  auto chan = [](double t) {
    return static_cast<std::uint8_t>(std::round(255.0 * std::clamp(t, 0.0, 1.0)));
  };
  return {chan(3.0 * u), chan(3.0 * u - 1.0), chan(3.0 * u - 2.0)};
}

/// round(255 (d - d_min) / (d_max - d_min)) clamped to [0, 255].
inline int normalize_depth(double d, const ColorizationRange& r) {
  const double v = std::round(255.0 * (d - r.d_min) / (r.d_max - r.d_min));
  return static_cast<int>(std::clamp(v, 0.0, 255.0));
}

inline std::array<std::uint8_t, 3> colorize_value(int v) { return hot_colormap(static_cast<double>(v) / 255.0); }

/// Colorizes depth where `mask` is set (or everywhere when mask is empty).
/// Invalid depth (0) and unmasked pixels map to black.
inline RgbImage colorize_depth(const DepthImage& depth, const ColorizationRange& range, const Mask* mask = nullptr) {
  if (!(range.d_min < range.d_max)) throw std::invalid_argument("colorization range needs d_min < d_max");
  if (mask && !mask->same_grid(depth)) throw std::invalid_argument("mask and depth grids differ");
  RgbImage out(depth.width, depth.height, 3);
  for (std::size_t y = 0; y < depth.height; ++y)
    for (std::size_t x = 0; x < depth.width; ++x) {
      const std::uint16_t d = depth.at(x, y);
      if (d == 0 || (mask && !mask->at(x, y))) continue;
      const auto rgb = colorize_value(normalize_depth(d, range));
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
    }
  return out;
}

/// Fixed-pixel scene-flow proxy: F(u,v) = P_cur(u,v) - P_prev(u,v) where both
/// depths are valid, zero elsewhere.
inline FlowField flow_field(const RgbdFrame& prev, const RgbdFrame& cur, const CameraModel& cam) {
  if (!prev.depth.same_grid(cur.depth)) throw std::invalid_argument("flow_field: frame resolutions differ");
  FlowField f(cur.depth.width, cur.depth.height, 3);
  for (std::size_t v = 0; v < cur.depth.height; ++v)
    for (std::size_t u = 0; u < cur.depth.width; ++u) {
      const std::uint16_t d0 = prev.depth.at(u, v), d1 = cur.depth.at(u, v);
      if (d0 == 0 || d1 == 0) continue;
      const auto p0 = cam.backproject(u, v, d0), p1 = cam.backproject(u, v, d1);
      for (std::size_t c = 0; c < 3; ++c) f.at(u, v, c) = p1[c] - p0[c];
    }
  return f;
}

/// |F| quantized to multiples of 2^-30 m; sums of such values are exact in
/// double precision, so accumulation is order independent and additive.
inline double quantized_magnitude(double x, double y, double z) {
  return std::ldexp(std::round(std::ldexp(std::sqrt(x * x + y * y + z * z), 30)), -30);
}

/// Per-pixel sum over frames of |F_t| restricted to hand_masks[t].
inline ScalarField accumulate_flow_magnitude(const std::vector<FlowField>& fields, const std::vector<Mask>& hand_masks) {
  if (fields.empty()) throw std::invalid_argument("accumulate_flow_magnitude: empty sequence");
  if (fields.size() != hand_masks.size())
    throw std::invalid_argument("accumulate_flow_magnitude: one hand mask per flow field required");
  ScalarField acc(fields[0].width, fields[0].height, 1);
  for (std::size_t t = 0; t < fields.size(); ++t) {
    const FlowField& f = fields[t];
    if (!f.same_grid(acc) || !hand_masks[t].same_grid(acc) || f.channels != 3)
      throw std::invalid_argument("accumulate_flow_magnitude: grid mismatch at frame " + std::to_string(t));
    for (std::size_t y = 0; y < acc.height; ++y)
      for (std::size_t x = 0; x < acc.width; ++x)
        if (hand_masks[t].at(x, y)) acc.at(x, y) += quantized_magnitude(f.at(x, y, 0), f.at(x, y, 1), f.at(x, y, 2));
  }
  return acc;
}

/// Colorizes a magnitude field with its own min/max; a constant field is black.
inline RgbImage colorize_magnitude(const ScalarField& field) {
  const auto [lo, hi] = std::minmax_element(field.data.begin(), field.data.end());
  RgbImage out(field.width, field.height, 3);
  if (lo == field.data.end() || !(*lo < *hi)) return out;
  const ColorizationRange r{*lo, *hi};
  for (std::size_t y = 0; y < field.height; ++y)
    for (std::size_t x = 0; x < field.width; ++x) {
      const auto rgb = colorize_value(normalize_depth(field.at(x, y), r));
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
    }
  return out;
}

/// Indices round(i (T-1) / (n-1)), i = 0..n-1, rounding halves upward.
inline std::vector<std::size_t> sample_frames_uniform(std::size_t frame_count, std::size_t n = 20) {
  if (frame_count == 0) throw std::invalid_argument("sample_frames_uniform: clip has no frames");
  if (n == 0) return {};
  std::vector<std::size_t> idx(n, 0);
  if (n == 1) return idx;
  for (std::size_t i = 0; i < n; ++i) idx[i] = (2 * i * (frame_count - 1) + (n - 1)) / (2 * (n - 1));
  return idx;
}

struct FrontendConfig {
  CameraModel camera;
  SegmentationThresholds thresholds;
  ColorizationRange range;
  std::size_t crop_side = 72;
  std::size_t sample_count = 20;
};

struct StreamSet {
  std::vector<RgbImage> object_maps;  // per sampled frame
  std::vector<RgbImage> hand_maps;    // per sampled frame
  RgbImage flow_template;             // one per clip
};

/// VOI filter -> center crop -> HSV segmentation on every frame; colorized
/// object/hand maps at the sampled frames; flow magnitude accumulated over the
/// whole clip.
inline StreamSet run_pipeline(const std::vector<RgbdFrame>& frames, const FrontendConfig& cfg) {
  if (frames.empty()) throw std::invalid_argument("run_pipeline: clip has no frames");
  cfg.camera.validate();
  const CropWindow win = center_window(frames[0].depth.width, frames[0].depth.height, cfg.crop_side);
  const CameraModel cam = cfg.camera.cropped(win.x, win.y);

  std::vector<RgbdFrame> cropped;
  std::vector<SegmentationMasks> masks;
  cropped.reserve(frames.size());
  for (const auto& f : frames) {
    if (!f.depth.same_grid(frames[0].depth)) throw std::invalid_argument("run_pipeline: frame sizes differ");
    cropped.push_back(crop_center(voi_filter(f, cfg.camera), cfg.crop_side));
    masks.push_back(hsv_segment(cropped.back(), cfg.thresholds));
  }

  StreamSet out;
  for (std::size_t i : sample_frames_uniform(frames.size(), cfg.sample_count)) {
    out.object_maps.push_back(colorize_depth(cropped[i].depth, cfg.range, &masks[i].object));
    out.hand_maps.push_back(colorize_depth(cropped[i].depth, cfg.range, &masks[i].hand));
  }

  std::vector<FlowField> fields;
  std::vector<Mask> hand;
  for (std::size_t t = 1; t < cropped.size(); ++t) {
    fields.push_back(flow_field(cropped[t - 1], cropped[t], cam));
    hand.push_back(masks[t].hand);
  }
  if (fields.empty()) out.flow_template = RgbImage(cfg.crop_side, cfg.crop_side, 3);
  else out.flow_template = colorize_magnitude(accumulate_flow_magnitude(fields, hand));
  return out;
}

}  // namespace sorec
