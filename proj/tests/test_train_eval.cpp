#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "sorec/train_eval.hpp"

using namespace sorec;

namespace {

RgbImage ramp_image(std::size_t w, std::size_t h, int base = 0) {
  RgbImage img(w, h, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((base + 10 * x + 3 * y + c) % 256);
  return img;
}

const std::vector<ClipStreams>& corpus() {
  static const std::vector<ClipStreams> clips = synth_streams(1, 1, SynthConfig{}, 11, false);
  return clips;
}

// One clip per object class 0..7 (their first listed affordance).
std::vector<ClipStreams> eight_clips() {
  std::vector<ClipStreams> out;
  std::vector<bool> seen(kObjectClasses, false);
  for (const auto& c : corpus())
    if (c.object < 8 && !seen[c.object]) {
      seen[c.object] = true;
      out.push_back(c);
    }
  return out;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr_decay_factor = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.plateau_patience = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RandomCrop, FullSideIsIdentity) {
  std::mt19937_64 rng(1);
  const RgbImage img = ramp_image(9, 9);
  EXPECT_EQ(random_crop(img, 9, rng), img);
}

TEST(RandomCrop, TwoFromThreeIsUniform) {
  std::mt19937_64 rng(2);
  RgbImage img(3, 3, 3);
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  const int n = 8000;
  for (int i = 0; i < n; ++i) {
    const CropOffset o = random_crop_offset(3, 3, 2, rng);
    ++counts[{o.x, o.y}];
  }
  ASSERT_EQ(counts.size(), 4u);
  // binomial(n, 1/4): sigma ~ 38.7
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (const auto& [pos, k] : counts) EXPECT_NEAR(k, n / 4.0, 4 * sigma);
}

TEST(RandomCrop, TooLargeThrows) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(random_crop(ramp_image(4, 4), 5, rng), DimensionError);
  EXPECT_THROW(random_crop_offset(4, 6, 0, rng), DimensionError);
}

TEST(SampleInput, ImagesShareOneWindow) {
  Sample s;
  s.app = {ramp_image(12, 12, 0), ramp_image(12, 12, 50)};
  s.aff = {ramp_image(12, 12, 100), ramp_image(12, 12, 150)};
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const GraphInput in = sample_input(s, 8, &rng);
    // recover the offset from the first image: value(0,0,0) = (10x + 3y) % 256
    const double v0 = in.app[0].at(0, 0, 0) * 255.0;
    for (std::size_t k = 1; k < 2; ++k) {
      EXPECT_NEAR(in.app[k].at(0, 0, 0) * 255.0, std::fmod(v0 + 50, 256), 1e-9);
      EXPECT_NEAR(in.aff[k].at(0, 0, 0) * 255.0, std::fmod(v0 + 150, 256), 1e-9);
    }
    EXPECT_NEAR(in.aff[0].at(0, 0, 0) * 255.0, std::fmod(v0 + 100, 256), 1e-9);
  }
  const GraphInput centered = sample_input(s, 8, nullptr);
  EXPECT_EQ(centered.app[0].at(0, 0, 0), s.app[0].at(2, 2, 0) / 255.0);
  EXPECT_EQ(centered.app[0].shape(), (Shape{3, 8, 8}));
}

TEST(Scheduler, DecreasingLossesKeepLr) {
  TrainConfig c;
  const auto lr = lr_schedule({5, 4, 3, 2, 1, 0.5, 0.25}, c);
  for (double v : lr) EXPECT_EQ(v, c.lr);
}

TEST(Scheduler, FlatLossesDecayAtPatience) {
  // epoch 0 sets the reference; epochs 1..3 fail to improve, so the third
  // stale epoch (index 3) halves the rate
  TrainConfig c;
  c.plateau_patience = 3;
  const auto lr = lr_schedule({1, 1, 1, 1, 1, 1, 1}, c);
  EXPECT_EQ(lr[0], c.lr);
  EXPECT_EQ(lr[2], c.lr);
  EXPECT_EQ(lr[3], c.lr * 0.5);
  EXPECT_EQ(lr[5], c.lr * 0.5);
  EXPECT_EQ(lr[6], c.lr * 0.25);  // second plateau compounds
}

TEST(Scheduler, SubThresholdImprovementIsStale) {
  TrainConfig c;
  c.plateau_patience = 2;
  PlateauState st;
  st.lr = 1.0;
  EXPECT_FALSE(lr_scheduler_step(1.0, st, c));
  EXPECT_FALSE(lr_scheduler_step(1.0 - 0.5e-4, st, c));
  EXPECT_TRUE(lr_scheduler_step(1.0 - 0.9e-4, st, c));
  EXPECT_EQ(st.lr, 0.5);
  EXPECT_EQ(st.stale, 0u);
  EXPECT_FALSE(lr_scheduler_step(0.5, st, c));  // real improvement resets
  EXPECT_EQ(st.best, 0.5);
}

TEST(Aggregate, ConstantFramesAgree) {
  const std::vector<std::vector<double>> f(5, {0.2, 0.3, 0.5});
  EXPECT_EQ(aggregate_predictions(f, Aggregation::AllFrames), aggregate_predictions(f, Aggregation::LastFrame));
}

TEST(Aggregate, TwoFrameMean) {
  const auto m = aggregate_predictions({{1, 0}, {0, 1}}, Aggregation::AllFrames);
  EXPECT_EQ(m, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(aggregate_predictions({{1, 0}, {0, 1}}, Aggregation::LastFrame), (std::vector<double>{0, 1}));
}

TEST(Aggregate, RandomSimplexMeanSumsToOne) {
  std::mt19937_64 rng(5);
  std::gamma_distribution<double> gam(1.0, 1.0);
  std::vector<std::vector<double>> f;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> p(14);
    double z = 0;
    for (double& v : p) z += v = gam(rng);
    for (double& v : p) v /= z;
    f.push_back(p);
  }
  const auto m = aggregate_predictions(f, Aggregation::AllFrames);
  EXPECT_NEAR(std::accumulate(m.begin(), m.end(), 0.0), 1.0, 1e-12);
  for (double v : m) EXPECT_GE(v, 0.0);
  EXPECT_EQ(argmax(aggregate_predictions(f, Aggregation::LastFrame)), argmax(f.back()));
  EXPECT_THROW(aggregate_predictions({}, Aggregation::AllFrames), std::invalid_argument);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0u);
  EXPECT_EQ(argmax(std::vector<double>{0.1, 0.4, 0.4, 0.1}), 1u);
}

TEST(EvalReport, PerfectClassifier) {
  std::vector<std::size_t> y;
  for (std::size_t c = 0; c < 14; ++c)
    for (int k = 0; k < 3; ++k) y.push_back(c);
  const EvalReport r = EvalReport::from_predictions(y, y, 14);
  EXPECT_EQ(r.accuracy, 1.0);
  for (std::size_t i = 0; i < 14; ++i)
    for (std::size_t j = 0; j < 14; ++j) EXPECT_EQ(r.confusion[i][j], i == j ? 3u : 0u);
}

TEST(EvalReport, SingleClipOneCell) {
  const EvalReport r = EvalReport::from_predictions({4}, {9}, 14);
  std::size_t nonzero = 0;
  for (const auto& row : r.confusion)
    for (std::size_t v : row) nonzero += v != 0;
  EXPECT_EQ(nonzero, 1u);
  EXPECT_EQ(r.confusion[4][9], 1u);
  EXPECT_EQ(r.accuracy, 0.0);
  EXPECT_TRUE(std::isnan(r.per_class_accuracy[0]));
}

TEST(EvalReport, UniformRandomClassifierNearChance) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> pick(0, 13);
  std::vector<std::size_t> y, p;
  for (std::size_t c = 0; c < 14; ++c)
    for (int k = 0; k < 100; ++k) {
      y.push_back(c);
      p.push_back(pick(rng));
    }
  const EvalReport r = EvalReport::from_predictions(y, p, 14);
  const double n = 1400, q = 1.0 / 14;
  EXPECT_NEAR(r.accuracy, q, 3 * std::sqrt(q * (1 - q) / n));
  std::size_t total = 0, trace = 0;
  for (std::size_t i = 0; i < 14; ++i) {
    trace += r.confusion[i][i];
    EXPECT_EQ(std::accumulate(r.confusion[i].begin(), r.confusion[i].end(), std::size_t{0}), 100u);
    for (std::size_t v : r.confusion[i]) total += v;
  }
  EXPECT_EQ(total, 1400u);
  EXPECT_EQ(r.accuracy, static_cast<double>(trace) / 1400.0);
}

TEST(Samples, SlotsAndLabels) {
  const ScaleConfig c = ScaleConfig::desk();
  const auto& clips = corpus();
  NetworkGraph app = build_appearance_cnn(c), tm = build_tm_cnn(c);
  NetworkGraph gtm = build_fused(parse_arch_spec("GTM_SML(RL5_3:app,RL5_3:aff,RL6)"), c);
  const auto sa = make_samples(clips, app), st = make_samples(clips, tm), sg = make_samples(clips, gtm);
  ASSERT_EQ(sa.size(), clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_EQ(sa[i].label, clips[i].object);
    EXPECT_EQ(st[i].label, clips[i].affordance);
    EXPECT_EQ(sg[i].label, clips[i].object);
    EXPECT_EQ(sa[i].app.size(), 1u);
    EXPECT_TRUE(sa[i].aff.empty());
    EXPECT_TRUE(st[i].app.empty());
    EXPECT_EQ(st[i].aff.front(), clips[i].streams.flow_template);
    EXPECT_EQ(sg[i].app.front(), clips[i].streams.object_maps.front());
  }
  const auto hand = make_samples(clips, tm, AffordanceImage::HandMap);
  EXPECT_EQ(hand[0].aff.front(), clips[0].streams.hand_maps.front());
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  NetworkGraph g = build_appearance_cnn(ScaleConfig::desk(), 3);
  const NetworkGraph before = g;
  const auto s = make_samples(eight_clips(), g);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train(g, s, s, cfg);
  EXPECT_FALSE(r.trained);
  EXPECT_TRUE(r.curve.empty());
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    for (std::size_t k = 0; k < g.layers[i].params.size(); ++k)
      EXPECT_EQ(g.layers[i].params[k].values(), before.layers[i].params[k].values());
}

TEST(Train, SingleStepDecreasesSampleLoss) {
  NetworkGraph g = build_appearance_cnn(ScaleConfig::desk(), 4);
  const auto all = make_samples(eight_clips(), g);
  std::vector<Sample> one{all[2]};
  one[0].app[0] = crop(one[0].app[0], center_window(72, 72, 64));  // crop == image: no randomness
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  cfg.lr = 1e-5;
  const double before = mean_loss(g, one, 64);
  const TrainResult r = train(g, one, one, cfg);
  ASSERT_EQ(r.curve.size(), 1u);
  EXPECT_EQ(r.curve[0].train_loss, before);
  EXPECT_LT(r.curve[0].val_loss, before);
  EXPECT_LT(mean_loss(g, one, 64), before);
}

TEST(Train, FixedSeedReproducesCurve) {
  const ScaleConfig c = ScaleConfig::desk();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  auto run = [&] {
    NetworkGraph g = build_appearance_cnn(c, 5);
    const auto s = make_samples(eight_clips(), g);
    const TrainResult r = train(g, s, {s[0], s[1]}, cfg);
    std::vector<double> v;
    for (const auto& e : r.curve) v.insert(v.end(), {e.train_loss, e.val_loss, e.lr});
    return v;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 9u);
  EXPECT_EQ(a, b);
}

TEST(Train, NonFiniteLossNamesLayer) {
  NetworkGraph g = build_appearance_cnn(ScaleConfig::desk(), 6);
  const auto s = make_samples(eight_clips(), g);
  g.layers[*g.find(LayerName::conv(2, 1))].params[0].values()[7] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(g, s, s, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.layer(), "CONV2_1:app");
    EXPECT_NE(std::string(e.what()).find("CONV2_1:app"), std::string::npos);
  }
}

TEST(Train, OverfitsEightClips) {
  NetworkGraph g = build_appearance_cnn(ScaleConfig::desk(), 7);
  const auto s = make_samples(eight_clips(), g);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 2;
  cfg.seed = 3;
  double acc = 0;
  std::size_t epochs_run = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(g, s, s, cfg, [&](const EpochRecord& e) { epochs_run = e.epoch + 1; });
  acc = evaluate(g, s, Aggregation::LastFrame, cfg.crop_side).accuracy;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(acc, 1.0) << "best epoch " << r.best_epoch << " loss " << r.best_val_loss;
  RecordProperty("seconds", std::to_string(secs));
  std::printf("overfit: %zu epochs, %.1f s, best epoch %zu, loss %.4g\n", epochs_run, secs, r.best_epoch,
              r.best_val_loss);
}
