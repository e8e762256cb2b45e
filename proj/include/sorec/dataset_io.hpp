// On-disk corpus: synthetic generation, frame loading, and the preprocessed
// three-stream layout (<root>/<id>/obj_NN.png, hand_NN.png, flow.png plus an
// index.jsonl carrying labels).
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sorec/dataset.hpp"
#include "sorec/image_io.hpp"
#include "sorec/manifest.hpp"

namespace sorec {

/// Writes frames and `manifest.jsonl` under `root`; returns the clips with
/// absolute directories.
inline std::vector<InteractionClip> synth_generate(const std::string& root, int n_subjects, std::size_t per_combo,
                                                   const SynthConfig& cfg, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::vector<InteractionClip> clips;
  for (const auto& spec : synth_plan(n_subjects, per_combo)) {
    const auto frames = render_clip(cfg, spec, seed);
    const fs::path dir = fs::path(root) / spec.id();
    InteractionClip c{spec.id(), spec.subject, 0, spec.object, spec.affordance,
                      (dir / "depth").string(), (dir / "rgb").string(), frames.size()};
    fs::create_directories(c.depth_dir);
    fs::create_directories(c.rgb_dir);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      write_depth_png(depth_frame_path(c, i), frames[i].depth);
      write_rgb_png(rgb_frame_path(c, i), frames[i].rgb);
    }
    clips.push_back(std::move(c));
  }
  write_manifest((fs::path(root) / "manifest.jsonl").string(), clips);
  return clips;
}

inline std::vector<RgbdFrame> load_clip_frames(const InteractionClip& c) {
  std::vector<RgbdFrame> frames;
  for (std::size_t i = 0; i < c.frame_count; ++i) {
    RgbdFrame f{read_rgb_png(rgb_frame_path(c, i)), read_depth_png(depth_frame_path(c, i)), i};
    if (!f.rgb.same_grid(f.depth))
      throw DataError("clip '" + c.id + "': frame " + std::to_string(i) + " RGB and depth sizes differ");
    frames.push_back(std::move(f));
  }
  return frames;
}

namespace detail {
inline std::string numbered(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02zu.png", stem, i);
  return buf;
}
}  // namespace detail

inline void write_streams(const std::string& root, const std::vector<ClipStreams>& clips) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream index(fs::path(root) / "index.jsonl");
  if (!index) throw DataError("cannot write stream index under " + root);
  for (const auto& c : clips) {
    const fs::path dir = fs::path(root) / c.id;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < c.streams.object_maps.size(); ++i)
      write_rgb_png((dir / detail::numbered("obj", i)).string(), c.streams.object_maps[i]);
    for (std::size_t i = 0; i < c.streams.hand_maps.size(); ++i)
      write_rgb_png((dir / detail::numbered("hand", i)).string(), c.streams.hand_maps[i]);
    write_rgb_png((dir / "flow.png").string(), c.streams.flow_template);
    index << nlohmann::json{{"id", c.id},
                            {"subject", c.subject},
                            {"object", std::string(Taxonomy::objects[c.object])},
                            {"affordance", std::string(Taxonomy::affordances[c.affordance])},
                            {"frames", c.streams.object_maps.size()}}
                 .dump()
          << '\n';
  }
}

inline std::vector<ClipStreams> read_streams(const std::string& root, bool keep_sequences = true) {
  namespace fs = std::filesystem;
  const fs::path index_path = fs::path(root) / "index.jsonl";
  std::ifstream is(index_path);
  if (!is) throw DataError("no stream index at " + index_path.string());
  std::vector<ClipStreams> out;
  std::string text;
  for (std::size_t line = 1; std::getline(is, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ClipStreams c;
    std::size_t frames = 0;
    try {
      const auto j = nlohmann::json::parse(text);
      c.id = j.at("id").get<std::string>();
      c.subject = j.at("subject").get<int>();
      const auto o = Taxonomy::object_index(j.at("object").get<std::string>());
      const auto a = Taxonomy::affordance_index(j.at("affordance").get<std::string>());
      if (!o || !a || !Taxonomy::is_valid(*o, *a)) throw DataError("invalid labels for '" + c.id + "'", line);
      c.object = *o;
      c.affordance = *a;
      frames = j.at("frames").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed stream index record: ") + e.what(), line);
    }
    const fs::path dir = fs::path(root) / c.id;
    const std::size_t n = keep_sequences ? frames : std::min<std::size_t>(frames, 1);
    try {
      for (std::size_t i = 0; i < n; ++i) {
        c.streams.object_maps.push_back(read_rgb_png((dir / detail::numbered("obj", i)).string()));
        c.streams.hand_maps.push_back(read_rgb_png((dir / detail::numbered("hand", i)).string()));
      }
      c.streams.flow_template = read_rgb_png((dir / "flow.png").string());
    } catch (const ImageIoError& e) {
      throw DataError(std::string(e.what()), line);
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace sorec
