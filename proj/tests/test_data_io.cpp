#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "sorec/dataset_io.hpp"
#include "sorec/snapshot.hpp"

namespace sorec {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sorec_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Taxonomy, FiftyFourCombinations) {
  EXPECT_EQ(Taxonomy::combinations().size(), 54u);
  EXPECT_EQ(Taxonomy::column_sum(*Taxonomy::affordance_index("Grasp")), 14u);
  EXPECT_EQ(Taxonomy::column_sum(*Taxonomy::affordance_index("Lift")), 14u);
  EXPECT_EQ(Taxonomy::column_sum(*Taxonomy::affordance_index("Type")), 1u);
  EXPECT_TRUE(Taxonomy::is_valid(*Taxonomy::object_index("Smartphone"), *Taxonomy::affordance_index("Type")));
  EXPECT_FALSE(Taxonomy::is_valid(*Taxonomy::object_index("Ball"), *Taxonomy::affordance_index("Cut")));
}

TEST(Taxonomy, RowAndColumnSums) {
  // Marks per row and per column, read off the published table.
  const std::array<std::size_t, 14> rows{3, 5, 4, 5, 3, 3, 4, 3, 4, 3, 3, 5, 4, 5};
  const std::array<std::size_t, 13> cols{14, 14, 9, 4, 2, 2, 2, 2, 1, 1, 1, 1, 1};
  for (std::size_t o = 0; o < 14; ++o) EXPECT_EQ(Taxonomy::row_sum(o), rows[o]) << Taxonomy::objects[o];
  for (std::size_t a = 0; a < 13; ++a) EXPECT_EQ(Taxonomy::column_sum(a), cols[a]) << Taxonomy::affordances[a];
}

TEST(Taxonomy, NameLookup) {
  EXPECT_EQ(Taxonomy::object_index("Ball"), 0u);
  EXPECT_EQ(Taxonomy::object_index("Sponge"), 13u);
  EXPECT_EQ(Taxonomy::affordance_index("Type"), 12u);
  EXPECT_FALSE(Taxonomy::object_index("Spoon"));
}

std::string record(const std::string& id, int subject, const std::string& obj, const std::string& aff,
                   std::size_t frames = 1) {
  return nlohmann::json{{"id", id},          {"subject", subject}, {"view", 0},
                        {"object", obj},     {"affordance", aff},  {"depth_dir", id + "/depth"},
                        {"rgb_dir", id + "/rgb"}, {"frame_count", frames}}
      .dump();
}

TEST(Manifest, EmptyFileGivesNoClips) {
  const fs::path d = scratch("empty");
  std::ofstream(d / "m.jsonl").close();
  EXPECT_TRUE(load_manifest((d / "m.jsonl").string()).empty());
}

TEST(Manifest, InvalidCombinationReportsLine) {
  const fs::path d = scratch("invalid");
  std::ofstream(d / "m.jsonl") << record("a", 1, "Ball", "Grasp") << "\n" << record("b", 1, "Ball", "Cut") << "\n";
  try {
    load_manifest((d / "m.jsonl").string(), {.check_frames = false});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("Ball, Cut"), std::string::npos);
  }
}

TEST(Manifest, MalformedLineReportsLine) {
  const fs::path d = scratch("malformed");
  std::ofstream(d / "m.jsonl") << record("a", 1, "Ball", "Grasp") << "\n\n{\"id\": 3,\n";
  try {
    load_manifest((d / "m.jsonl").string(), {.check_frames = false});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Manifest, MissingFrameFileIsError) {
  const fs::path d = scratch("missing");
  std::ofstream(d / "m.jsonl") << record("clipx", 1, "Cup", "Rotate", 2) << "\n";
  try {
    load_manifest((d / "m.jsonl").string());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("clipx"), std::string::npos);
  }
}

TEST(Manifest, ThreeRecordsKeepOrder) {
  const fs::path d = scratch("three");
  std::ofstream(d / "m.jsonl") << record("z", 2, "Knife", "Cut") << "\n"
                               << record("a", 1, "Pen", "Write") << "\n"
                               << record("m", 3, "Smartphone", "Type") << "\n";
  const auto clips = load_manifest((d / "m.jsonl").string(), {.check_frames = false});
  ASSERT_EQ(clips.size(), 3u);
  EXPECT_EQ(clips[0].id, "z");
  EXPECT_EQ(clips[1].id, "a");
  EXPECT_EQ(clips[2].id, "m");
  EXPECT_EQ(clips[2].object, 12u);
  EXPECT_EQ(clips[2].affordance, 12u);
}

TEST(Split, FourSubjectsGiveOneOneTwo) {
  const SplitAssignment s = split_by_subject(std::vector<int>{1, 2, 3, 4, 1, 2}, SplitRatios{}, 5);
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(Split, DisjointAndCoveringAcrossSeeds) {
  std::vector<int> subjects;
  for (int i = 1; i <= 10; ++i) subjects.push_back(i);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SplitAssignment s = split_by_subject(subjects, SplitRatios{}, seed);
    EXPECT_EQ(s.train.size(), 2u);
    EXPECT_EQ(s.val.size(), 2u);
    EXPECT_EQ(s.test.size(), 6u);
    std::set<int> all;
    for (const auto* v : {&s.train, &s.val, &s.test})
      for (int x : *v) EXPECT_TRUE(all.insert(x).second) << "subject " << x << " appears twice";
    EXPECT_EQ(all.size(), 10u);
    EXPECT_EQ(s.train, split_by_subject(subjects, SplitRatios{}, seed).train);
  }
}

TEST(Split, SingleSubjectGoesToTrain) {
  const SplitAssignment s = split_by_subject(std::vector<int>{7, 7}, SplitRatios{}, 1);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.train, std::vector<int>{7});
  EXPECT_TRUE(s.test.empty());
}

TEST(Split, FewSubjectsStillTrainOnOne) {
  // floor(0.25 * 2) == 0, but a positive train ratio keeps one subject
  const SplitAssignment s = split_by_subject(std::vector<int>{1, 2}, SplitRatios{}, 3);
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_TRUE(s.val.empty());
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, BadRatiosRejected) {
  EXPECT_THROW(split_by_subject(std::vector<int>{1, 2}, SplitRatios{0.5, 0.5, 0.5}, 1), std::invalid_argument);
}

TEST(Synth, PlanSizeAndValidity) {
  const auto plan = synth_plan(2, 1);
  EXPECT_EQ(plan.size(), 108u);
  for (const auto& s : plan) EXPECT_TRUE(Taxonomy::is_valid(s.object, s.affordance));
}

TEST(Synth, SameSeedSameBytes) {
  const SynthConfig cfg;
  const SynthClipSpec spec{3, 9, 6, 1};
  EXPECT_EQ(render_clip(cfg, spec, 42), render_clip(cfg, spec, 42));
  EXPECT_NE(render_clip(cfg, spec, 42), render_clip(cfg, spec, 43));
}

TEST(Synth, KnifeAndPenShareSilhouette) {
  const SynthConfig cfg;
  const auto knife = render_clip(cfg, {1, 9, 0, 0}, 5);
  const auto pen = render_clip(cfg, {1, 10, 0, 0}, 5);
  const auto a = hsv_segment(crop_center(voi_filter(knife[0], cfg.camera()), cfg.crop_side), {});
  const auto b = hsv_segment(crop_center(voi_filter(pen[0], cfg.camera()), cfg.crop_side), {});
  std::size_t diff = 0, on = 0;
  for (std::size_t i = 0; i < a.object.data.size(); ++i) diff += a.object.data[i] != b.object.data[i], on += a.object.data[i];
  // Positions jitter per clip by at most a pixel or so; shapes are identical.
  EXPECT_GT(on, 50u);
  EXPECT_LT(diff, on);
}

TEST(Synth, StreamsHaveExpectedCounts) {
  const SynthConfig cfg;
  const StreamSet s = run_pipeline(render_clip(cfg, {1, 4, 10, 0}, 9), cfg.frontend());
  EXPECT_EQ(s.object_maps.size(), 20u);
  EXPECT_EQ(s.hand_maps.size(), 20u);
  EXPECT_EQ(s.flow_template.width, cfg.crop_side);
  std::size_t lit = 0;
  for (auto v : s.flow_template.data) lit += v != 0;
  EXPECT_GT(lit, 0u);
}

TEST(Synth, DiskRoundTrip) {
  const fs::path d = scratch("synth");
  SynthConfig cfg;
  cfg.min_frames = cfg.max_frames = 3;
  const auto written = synth_generate(d.string(), 1, 1, cfg, 11);
  EXPECT_EQ(written.size(), 54u);
  const auto loaded = load_manifest((d / "manifest.jsonl").string());
  ASSERT_EQ(loaded.size(), 54u);
  EXPECT_EQ(loaded[5].id, written[5].id);
  const auto frames = load_clip_frames(loaded[5]);
  const auto spec = synth_plan(1, 1)[5];
  EXPECT_EQ(frames, render_clip(cfg, spec, 11));
}

TEST(StreamsIo, RoundTrip) {
  const fs::path d = scratch("streams");
  SynthConfig cfg;
  cfg.min_frames = cfg.max_frames = 4;
  const auto plan = synth_plan(1, 1);
  std::vector<ClipStreams> clips;
  for (std::size_t i : {0u, 17u}) {
    const auto& sp = plan[i];
    clips.push_back({sp.id(), sp.subject, sp.object, sp.affordance, run_pipeline(render_clip(cfg, sp, 1), cfg.frontend())});
  }
  write_streams(d.string(), clips);
  const auto back = read_streams(d.string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, clips[1].id);
  EXPECT_EQ(back[1].object, clips[1].object);
  EXPECT_EQ(back[1].streams.object_maps, clips[1].streams.object_maps);
  EXPECT_EQ(back[1].streams.flow_template, clips[1].streams.flow_template);
  EXPECT_EQ(read_streams(d.string(), false)[0].streams.object_maps.size(), 1u);
}

TEST(ImageIo, DepthPngIsLossless) {
  const fs::path d = scratch("png");
  DepthImage img(7, 5, 1);
  std::mt19937_64 rng(3);
  for (auto& v : img.data) v = static_cast<std::uint16_t>(rng());
  write_depth_png((d / "d.png").string(), img);
  EXPECT_EQ(read_depth_png((d / "d.png").string()), img);
  EXPECT_THROW(read_depth_png((d / "nope.png").string()), ImageIoError);
}

Tensor random_tensor(Shape s, std::mt19937_64& rng) {
  Tensor t(std::move(s));
  std::normal_distribution<double> n;
  for (double& v : t.data()) v = n(rng);
  return t;
}

TEST(Snapshot, RoundTripWithinF32) {
  std::mt19937_64 rng(8);
  const std::vector<NamedTensor> ts{{"conv/weight", random_tensor({4, 3, 3, 3}, rng)}, {"b", random_tensor({4}, rng)}};
  std::stringstream ss;
  write_checkpoint(ss, ts);
  const auto back = read_checkpoint(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, "conv/weight");
  EXPECT_EQ(back[0].second.shape(), ts[0].second.shape());
  for (std::size_t i = 0; i < ts[0].second.size(); ++i)
    EXPECT_EQ(back[0].second[i], static_cast<double>(static_cast<float>(ts[0].second[i])));
}

TEST(Snapshot, SingleTensorLayout) {
  std::stringstream ss;
  write_tensor(ss, Tensor({2}, std::vector<double>{1.0, -2.0}));
  const std::string b = ss.str();
  ASSERT_EQ(b.size(), 4u + 4u + 4u + 8u);
  EXPECT_EQ(b.substr(0, 4), "SMT1");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1);  // rank, little-endian
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 2);  // extent
  EXPECT_EQ(static_cast<unsigned char>(b[15]), 0x3f);  // 1.0f = 0x3f800000
  EXPECT_EQ(static_cast<unsigned char>(b[19]), 0xc0);  // -2.0f = 0xc0000000
}

TEST(Snapshot, TruncatedIsCorruption) {
  std::mt19937_64 rng(9);
  std::stringstream ss;
  write_checkpoint(ss, {{"w", random_tensor({3, 5}, rng)}});
  const std::string full = ss.str();
  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, full.size() - 1}) {
    std::stringstream part(full.substr(0, cut));
    EXPECT_THROW(read_checkpoint(part), SnapshotError) << cut;
  }
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tensor(bad), SnapshotError);
}

TEST(Snapshot, FlowFieldLoader) {
  const fs::path d = scratch("flow");
  Tensor t({2, 3, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.25 * static_cast<double>(i);
  save_tensor(t, (d / "f.smt").string());
  const FlowField f = load_flow_field((d / "f.smt").string());
  EXPECT_EQ(f.width, 3u);
  EXPECT_EQ(f.height, 2u);
  EXPECT_EQ(f.at(2, 1, 1), t[(1 * 3 + 2) * 3 + 1]);
  save_tensor(Tensor({2, 3}), (d / "g.smt").string());
  EXPECT_THROW(load_flow_field((d / "g.smt").string()), SnapshotError);
}

}  // namespace
}  // namespace sorec
