// Deterministic synthetic interaction clips.
//
// A top-down desk scene: green cloth at a fixed depth, floor outside the
// volume of interest along the top edge, one static object whose silhouette
// and height encode its class, and a skin-colored elliptical hand whose
// trajectory encodes the affordance. Knife and Pen share one silhouette, so
// only the hand motion separates them.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sorec/frontend.hpp"
#include "sorec/taxonomy.hpp"

namespace sorec {

struct SynthConfig {
  std::size_t width = 96, height = 80;
  double focal = 80.0;
  std::uint16_t desk_mm = 1000, floor_mm = 1600;
  double hand_height_mm = 150.0;  // above the desk
  std::size_t floor_rows = 6;
  std::size_t min_frames = 24, max_frames = 32;
  int depth_noise_mm = 2;
  std::size_t crop_side = 72;
  ColorizationRange range{600.0, 1100.0};

  CameraModel camera() const {
    CameraModel c;
    c.fx = c.fy = focal;
    c.cx = (static_cast<double>(width) - 1.0) / 2.0;
    c.cy = (static_cast<double>(height) - 1.0) / 2.0;
    c.voi = {{-0.8, -0.7, 0.5}, {0.8, 0.7, (desk_mm + 50) / 1000.0}};
    return c;
  }

  FrontendConfig frontend() const {
    FrontendConfig f;
    f.camera = camera();
    f.range = range;
    f.crop_side = crop_side;
    return f;
  }
};

struct SynthClipSpec {
  int subject = 0;
  std::size_t object = 0, affordance = 0, rep = 0;

  std::string id() const {
    char buf[48];
    std::snprintf(buf, sizeof buf, "s%02d_o%02zu_a%02zu_r%zu", subject, object, affordance, rep);
    return buf;
  }
};

/// Every valid combination, `per_combo` times, for subjects 1..n_subjects.
inline std::vector<SynthClipSpec> synth_plan(int n_subjects, std::size_t per_combo) {
  std::vector<SynthClipSpec> out;
  for (int s = 1; s <= n_subjects; ++s)
    for (const auto& [o, a] : Taxonomy::combinations())
      for (std::size_t r = 0; r < per_combo; ++r) out.push_back({s, o, a, r});
  return out;
}

namespace synth_detail {

// Height above the desk (mm) of object class `cls` at local offset (x, y), or
// 0 outside the silhouette.
inline double object_height(std::size_t cls, double x, double y) {
  auto rect = [&](double cx, double cy, double hx, double hy) {
    return std::abs(x - cx) <= hx && std::abs(y - cy) <= hy;
  };
  const double r = std::hypot(x, y);
  switch (cls) {
    case 0:  // Ball
      return r <= 9.0 ? 20.0 + 60.0 * std::sqrt(1.0 - (r / 9.0) * (r / 9.0)) : 0.0;
    case 1:  // Book
      return rect(0, 0, 11, 8) ? 25.0 : 0.0;
    case 2:  // Bottle
      if (rect(0, -14, 2, 3)) return 140.0;
      return rect(0, 0, 4, 11) ? 120.0 : 0.0;
    case 3:  // Box
      return rect(0, 0, 10, 10) ? 80.0 : 0.0;
    case 4:  // Brush
      if (rect(10, 0, 3, 5)) return 30.0;
      return rect(-3, 0, 10, 1.5) ? 20.0 : 0.0;
    case 5:  // Can
      return r <= 6.0 ? 100.0 : 0.0;
    case 6:  // Cup
      if (r <= 3.5) return 40.0;
      return r <= 7.0 ? 90.0 : 0.0;
    case 7:  // Hammer
      if (rect(0, -10, 8, 2.5)) return 35.0;
      return rect(0, 2, 1.5, 10) ? 25.0 : 0.0;
    case 8:  // Key
      if (std::hypot(x + 6, y) <= 5.0) return std::hypot(x + 6, y) >= 2.0 ? 10.0 : 0.0;
      if (rect(4, 0, 6, 1.2)) return 10.0;
      return rect(7, 2, 1, 1.5) ? 10.0 : 0.0;
    case 9:   // Knife
    case 10:  // Pen
      return rect(0, 0, 14, 2) ? 15.0 : 0.0;
    case 11:  // Pitcher
      if (rect(10.5, 0, 2, 4)) return 110.0;
      return r <= 8.0 ? 140.0 : 0.0;
    case 12:  // Smartphone
      return rect(0, 0, 5, 9) ? 10.0 : 0.0;
    case 13:  // Sponge
      return rect(0, 0, 12, 4) ? 45.0 : 0.0;
    default:
      return 0.0;
  }
}

struct HandPose {
  double x = 0, y = 0;     // offset from the object center, pixels
  double lift = 0;         // extra height above hand_height_mm
  double ax = 7, ay = 5;   // ellipse semi-axes
};

// Hand pose at normalized time s in [0,1] for affordance `aff`; the first
// phase approaches the object from the lower left.
inline HandPose hand_pose(std::size_t aff, double s, double start_angle, double speed) {
  constexpr double pi = std::numbers::pi;
  const double reach = aff == 0 ? 0.5 : 0.3;
  const double sx = 26.0 * std::cos(start_angle), sy = 26.0 * std::sin(start_angle);
  HandPose p;
  if (s < reach) {
    const double k = s / reach;
    p.x = sx * (1.0 - k);
    p.y = sy * (1.0 - k);
    if (aff == 2) p.x -= 12.0 * k;
    return p;
  }
  const double u = std::min(1.0, (s - reach) / (1.0 - reach) * speed);  // post-contact phase
  const double w = 2.0 * pi * u;
  switch (aff) {
    case 0:  // Grasp
      break;
    case 1:  // Lift
      p.lift = 250.0 * u;
      break;
    case 2:  // Push
      p.x = -12.0 + 22.0 * u;
      break;
    case 3:  // Rotate
      p.x = 8.0 * std::sin(1.5 * w);
      p.y = 8.0 * (1.0 - std::cos(1.5 * w));
      break;
    case 4:  // Open
      p.y = -12.0 * u;
      p.lift = 150.0 * u;
      break;
    case 5:  // Hammer
      p.lift = 150.0 * std::abs(std::sin(3.0 * w));
      break;
    case 6:  // Cut
      p.x = 10.0 * std::sin(3.0 * w);
      break;
    case 7:  // Pour
      p.x = 14.0 * u;
      p.lift = 200.0 * u;
      break;
    case 8:  // Squeeze
      p.ax += 2.0 * std::sin(4.0 * w);
      p.ay += 2.0 * std::sin(4.0 * w);
      break;
    case 9:  // Unlock
      p.x = 4.0 * std::sin(3.0 * w);
      p.y = 4.0 * (1.0 - std::cos(3.0 * w));
      break;
    case 10:  // Paint
      p.x = 12.0 * std::sin(2.0 * w);
      p.y = 10.0 * u;
      break;
    case 11:  // Write
      p.x = -7.0 + 14.0 * u;
      p.y = 4.0 * std::sin(6.0 * w);
      break;
    case 12:  // Type
      p.x = 5.0 * std::sin(2.0 * w);
      p.lift = 60.0 * std::sin(5.0 * w) * std::sin(5.0 * w);
      break;
    default:
      break;
  }
  return p;
}

struct SubjectTraits {
  double obj_dx, obj_dy, scale, start_angle, speed, hand_scale;
  std::array<int, 3> skin;
};

inline SubjectTraits subject_traits(int subject, std::uint64_t seed) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(subject), 0x5b1ec7u};
  std::mt19937_64 rng(sq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SubjectTraits t{};
  t.obj_dx = -4.0 + 8.0 * u(rng);
  t.obj_dy = -3.0 + 6.0 * u(rng);
  t.scale = 0.92 + 0.16 * u(rng);
  t.start_angle = std::numbers::pi * (0.6 + 0.3 * u(rng));
  t.speed = 0.9 + 0.2 * u(rng);
  t.hand_scale = 0.9 + 0.2 * u(rng);
  t.skin = {190 + static_cast<int>(25 * u(rng)), 140 + static_cast<int>(20 * u(rng)),
            95 + static_cast<int>(15 * u(rng))};
  return t;
}

}  // namespace synth_detail

/// Renders one clip. Output depends only on (cfg, spec, seed).
inline std::vector<RgbdFrame> render_clip(const SynthConfig& cfg, const SynthClipSpec& spec, std::uint64_t seed) {
  using namespace synth_detail;
  const SubjectTraits tr = subject_traits(spec.subject, seed);
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(spec.subject), static_cast<std::uint32_t>(spec.object),
                   static_cast<std::uint32_t>(spec.affordance), static_cast<std::uint32_t>(spec.rep)};
  std::mt19937_64 rng(sq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> noise(-cfg.depth_noise_mm, cfg.depth_noise_mm), tint(-6, 6);

  const std::size_t T =
      cfg.min_frames + static_cast<std::size_t>(u(rng) * static_cast<double>(cfg.max_frames - cfg.min_frames + 1));
  const double ox = (cfg.width - 1) / 2.0 + tr.obj_dx + (u(rng) - 0.5) * 2.0;
  const double oy = (cfg.height - 1) / 2.0 + tr.obj_dy + (u(rng) - 0.5) * 2.0;
  const double scale = tr.scale * (0.97 + 0.06 * u(rng));
  const double angle = tr.start_angle + (u(rng) - 0.5) * 0.3;

  std::vector<RgbdFrame> frames;
  frames.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double s = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
    const HandPose hp = hand_pose(spec.affordance, s, angle, tr.speed);
    const double hx = ox + hp.x, hy = oy + hp.y;
    const double ax = hp.ax * tr.hand_scale, ay = hp.ay * tr.hand_scale;
    const double hand_mm = cfg.desk_mm - cfg.hand_height_mm - hp.lift;

    RgbdFrame f{RgbImage(cfg.width, cfg.height, 3), DepthImage(cfg.width, cfg.height, 1), t};
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        std::array<int, 3> rgb;
        double d;
        const double dxh = (x - hx) / ax, dyh = (y - hy) / ay;
        const double h = object_height(spec.object, (x - ox) / scale, (y - oy) / scale);
        if (dxh * dxh + dyh * dyh <= 1.0) {
          d = hand_mm;
          rgb = tr.skin;
        } else if (h > 0.0) {
          d = cfg.desk_mm - h;
          rgb = {90, 100, 140};
        } else if (y < cfg.floor_rows) {
          d = cfg.floor_mm;
          rgb = {120, 100, 80};
        } else {
          d = cfg.desk_mm;
          rgb = {30, 180, 60};
        }
        const int di = static_cast<int>(std::lround(d)) + noise(rng);
        f.depth.at(x, y) = static_cast<std::uint16_t>(std::clamp(di, 1, 65535));
        for (std::size_t c = 0; c < 3; ++c) f.rgb.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(rgb[c] + tint(rng), 0, 255));
      }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace sorec
