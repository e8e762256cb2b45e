// Per-clip front-end outputs with labels, and the in-memory synthetic corpus.
#pragma once

#include <string>
#include <vector>

#include "sorec/frontend.hpp"
#include "sorec/synth.hpp"

namespace sorec {

struct ClipStreams {
  std::string id;
  int subject = 0;
  std::size_t object = 0, affordance = 0;
  StreamSet streams;
};

/// Drops all but the first object/hand map; enough for single-image (GTM) nets.
inline void keep_first_frame_only(StreamSet& s) {
  if (s.object_maps.size() > 1) s.object_maps.resize(1);
  if (s.hand_maps.size() > 1) s.hand_maps.resize(1);
  s.object_maps.shrink_to_fit();
  s.hand_maps.shrink_to_fit();
}

/// Renders and preprocesses a whole synthetic corpus without touching disk.
inline std::vector<ClipStreams> synth_streams(int n_subjects, std::size_t per_combo, const SynthConfig& cfg,
                                              std::uint64_t seed, bool keep_sequences) {
  std::vector<ClipStreams> out;
  const FrontendConfig fe = cfg.frontend();
  for (const auto& spec : synth_plan(n_subjects, per_combo)) {
    ClipStreams c{spec.id(), spec.subject, spec.object, spec.affordance, run_pipeline(render_clip(cfg, spec, seed), fe)};
    if (!keep_sequences) keep_first_frame_only(c.streams);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace sorec
