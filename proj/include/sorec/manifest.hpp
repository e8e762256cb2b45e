// Clip manifest (JSON lines), frame loading and subject-level splitting.
//
// One record per line:
//   {"id":..,"subject":..,"view":..,"object":"Knife","affordance":"Cut",
//    "depth_dir":..,"rgb_dir":..,"frame_count":N}
// Directories are relative to the manifest; frames are d_%05d.png / c_%05d.png.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sorec/errors.hpp"
#include "sorec/image.hpp"
#include "sorec/taxonomy.hpp"

namespace sorec {

struct InteractionClip {
  std::string id;
  int subject = 0;
  int view = 0;
  std::size_t object = 0;
  std::size_t affordance = 0;
  std::string depth_dir;  // resolved against the manifest directory on load
  std::string rgb_dir;
  std::size_t frame_count = 0;

  bool operator==(const InteractionClip&) const = default;
};

inline std::string frame_file(char prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c_%05zu.png", prefix, index);
  return buf;
}

inline std::string depth_frame_path(const InteractionClip& c, std::size_t i) {
  return (std::filesystem::path(c.depth_dir) / frame_file('d', i)).string();
}
inline std::string rgb_frame_path(const InteractionClip& c, std::size_t i) {
  return (std::filesystem::path(c.rgb_dir) / frame_file('c', i)).string();
}

/// Record with directories written relative to `base`.
inline nlohmann::json clip_to_json(const InteractionClip& c, const std::filesystem::path& base = {}) {
  auto rel = [&](const std::string& p) {
    return base.empty() ? p : std::filesystem::path(p).lexically_relative(base).generic_string();
  };
  return {{"id", c.id},
          {"subject", c.subject},
          {"view", c.view},
          {"object", std::string(Taxonomy::objects.at(c.object))},
          {"affordance", std::string(Taxonomy::affordances.at(c.affordance))},
          {"depth_dir", rel(c.depth_dir)},
          {"rgb_dir", rel(c.rgb_dir)},
          {"frame_count", c.frame_count}};
}

/// Parses one record; checks fields and the object/affordance combination.
inline InteractionClip parse_manifest_record(const std::string& text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("malformed record: ") + e.what(), line);
  }
  if (!j.is_object()) throw DataError("record is not an object", line);
  InteractionClip c;
  try {
    c.id = j.at("id").get<std::string>();
    c.subject = j.at("subject").get<int>();
    c.view = j.value("view", 0);
    const auto obj = j.at("object").get<std::string>(), aff = j.at("affordance").get<std::string>();
    const auto oi = Taxonomy::object_index(obj);
    const auto ai = Taxonomy::affordance_index(aff);
    if (!oi) throw DataError("unknown object '" + obj + "'", line);
    if (!ai) throw DataError("unknown affordance '" + aff + "'", line);
    if (!Taxonomy::is_valid(*oi, *ai)) throw DataError("invalid combination (" + obj + ", " + aff + ")", line);
    c.object = *oi;
    c.affordance = *ai;
    c.depth_dir = j.at("depth_dir").get<std::string>();
    c.rgb_dir = j.at("rgb_dir").get<std::string>();
    c.frame_count = j.at("frame_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad field: ") + e.what(), line);
  }
  if (c.frame_count == 0) throw DataError("clip '" + c.id + "' has no frames", line);
  return c;
}

struct ManifestOptions {
  bool check_frames = true;
};

inline std::vector<InteractionClip> load_manifest(const std::string& path, const ManifestOptions& opt = {}) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<InteractionClip> clips;
  std::string text;
  for (std::size_t line = 1; std::getline(is, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    InteractionClip c = parse_manifest_record(text, line);
    c.depth_dir = (base / c.depth_dir).string();
    c.rgb_dir = (base / c.rgb_dir).string();
    if (opt.check_frames)
      for (std::size_t i = 0; i < c.frame_count; ++i)
        for (const auto& f : {depth_frame_path(c, i), rgb_frame_path(c, i)})
          if (!std::filesystem::exists(f)) throw DataError("clip '" + c.id + "': missing frame file " + f, line);
    clips.push_back(std::move(c));
  }
  return clips;
}

inline void write_manifest(const std::string& path, const std::vector<InteractionClip>& clips) {
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path);
  for (const auto& c : clips) os << clip_to_json(c, base).dump() << '\n';
}

struct SplitRatios {
  double train = 0.25, val = 0.25, test = 0.5;
  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
  }
};

struct SplitAssignment {
  std::vector<int> train, val, test;  // subject ids, sorted
  bool degenerate = false;            // fewer than two subjects

  enum class Part { Train, Val, Test, None };
  Part part_of(int subject) const {
    auto in = [&](const std::vector<int>& v) { return std::binary_search(v.begin(), v.end(), subject); };
    if (in(train)) return Part::Train;
    if (in(val)) return Part::Val;
    if (in(test)) return Part::Test;
    return Part::None;
  }
};

/// Shuffles the distinct subjects with a seeded PRNG; train and val take
/// floor(ratio * n) subjects (train at least one), the rest go to test. A
/// single subject goes to train.
inline SplitAssignment split_by_subject(const std::vector<int>& subjects, const SplitRatios& r, std::uint64_t seed) {
  r.validate();
  std::vector<int> s(subjects.begin(), subjects.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  SplitAssignment out;
  if (s.size() < 2) {
    out.train = s;
    out.degenerate = true;
    return out;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(s.begin(), s.end(), rng);
  const auto n = static_cast<double>(s.size());
  // a positive train ratio always yields at least one training subject
  const auto n_train = std::max<std::size_t>(r.train > 0 ? 1 : 0, static_cast<std::size_t>(std::floor(r.train * n + 1e-9)));
  const auto n_val = std::min(s.size() - n_train, static_cast<std::size_t>(std::floor(r.val * n + 1e-9)));
  out.train.assign(s.begin(), s.begin() + n_train);
  out.val.assign(s.begin() + n_train, s.begin() + n_train + n_val);
  out.test.assign(s.begin() + n_train + n_val, s.end());
  for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

inline SplitAssignment split_by_subject(const std::vector<InteractionClip>& clips, const SplitRatios& r,
                                        std::uint64_t seed) {
  std::vector<int> s;
  for (const auto& c : clips) s.push_back(c.subject);
  return split_by_subject(s, r, seed);
}

}  // namespace sorec
