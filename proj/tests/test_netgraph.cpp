#include <gtest/gtest.h>

#include <random>
#include <set>

#include "sorec/arch_spec.hpp"
#include "sorec/gradcheck.hpp"
#include "sorec/netgraph.hpp"
#include "topology_fixture.hpp"

namespace sorec {
namespace {

ScaleConfig tiny() {
  ScaleConfig c;
  c.input_side = 32;
  c.group_channels = {2, 3, 3, 4, 4};
  c.convs_per_group = {1, 1, 2, 1, 2};
  c.fc_width = 6;
  c.lstm_layers = 1;
  c.lstm_hidden = 5;
  return c;
}

Tensor random_image(const ScaleConfig& c, std::mt19937_64& rng) {
  Tensor t({c.input_channels, c.input_side, c.input_side});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : t.data()) v = u(rng);
  return t;
}

GraphInput random_input(const ScaleConfig& c, std::size_t frames, std::mt19937_64& rng) {
  GraphInput in;
  for (std::size_t t = 0; t < frames; ++t) {
    in.app.push_back(random_image(c, rng));
    in.aff.push_back(random_image(c, rng));
  }
  return in;
}

void expect_simplex(const Tensor& p) {
  double s = 0.0;
  for (double v : p.data()) {
    EXPECT_GE(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

// ---- architecture-spec parser ----

TEST(ArchSpec, MultiLevelExample) {
  const FusionSpec s = parse_arch_spec("GTM_SML(RL5_3:app,RL5_3:aff,RL6)");
  EXPECT_EQ(s.gat, Gat::GTM);
  EXPECT_EQ(s.ft, FusionType::SML);
  ASSERT_EQ(s.fusion_points.size(), 3u);
  EXPECT_EQ(s.fusion_points[0].layer.str(), "RL5_3");
  EXPECT_EQ(s.fusion_points[0].stream, Stream::App);
  EXPECT_EQ(s.fusion_points[1].stream, Stream::Aff);
  EXPECT_EQ(s.fusion_points[2].layer.str(), "RL6");
  EXPECT_FALSE(s.fusion_points[2].stream.has_value());
}

TEST(ArchSpec, AsyncExample) {
  const FusionSpec s = parse_arch_spec("GST_LA(tau=2,agg=all)");
  EXPECT_EQ(s.gat, Gat::GST);
  EXPECT_EQ(s.ft, FusionType::LA);
  EXPECT_EQ(s.delay_tau, 2);
  EXPECT_EQ(s.aggregation, Aggregation::AllFrames);
  EXPECT_EQ(parse_arch_spec("GST_LS(agg=last)").aggregation, Aggregation::LastFrame);
}

TEST(ArchSpec, TailArgument) {
  const FusionSpec s = parse_arch_spec("GTM_LS(RL5_3,tail=2c1f)");
  ASSERT_TRUE(s.tail);
  EXPECT_EQ(s.tail->n_conv1x1, 2);
  EXPECT_EQ(s.tail->n_fc, 1);
}

TEST(ArchSpec, RoundTripsThroughStr) {
  for (const auto& text : testing::table_specs()) {
    const FusionSpec a = parse_arch_spec(text);
    const FusionSpec b = parse_arch_spec(a.str());
    EXPECT_EQ(a.str(), b.str()) << text;
  }
}

void expect_error(const std::string& text, ArchSpecError::Kind kind) {
  try {
    parse_arch_spec(text);
    ADD_FAILURE() << "accepted: " << text;
  } catch (const ArchSpecError& e) {
    EXPECT_EQ(e.kind(), kind) << text << ": " << e.what();
    EXPECT_LE(e.offset(), text.size()) << text;
  }
}

TEST(ArchSpec, SemanticErrors) {
  using K = ArchSpecError::Kind;
  expect_error("GTM_LA(tau=2)", K::Semantic);
  expect_error("GST_LA(agg=all)", K::Semantic);       // missing tau
  expect_error("GST_LS(tau=2)", K::Semantic);         // tau only with LA
  expect_error("GST_SML(RL5_3:app,RL5_3:aff,RL6)", K::Semantic);
  expect_error("GTM_SSL(RL5_3:app)", K::Semantic);
  expect_error("GTM_SSL(FC6:app,FC6:aff)", K::Semantic);
  expect_error("GTM_SML(RL5_3:app,RL5_3:aff)", K::Semantic);
  expect_error("GTM_LS(RL6,tail=1c2f)", K::Semantic);
  expect_error("GTM_LS(RL5_3,tail=3c1f)", K::Semantic);
  expect_error("GST_LS(RL5_3)", K::Semantic);
}

TEST(ArchSpec, SyntaxErrorsCarryOffset) {
  using K = ArchSpecError::Kind;
  expect_error("GTX_LS(FC6)", K::Syntax);
  expect_error("GTM_LS(FC6", K::Syntax);
  expect_error("GTM_LS(CONVX)", K::Syntax);
  expect_error("GTM_LS(RL5_3:foo)", K::Syntax);
  try {
    parse_arch_spec("GTM_LS(FC6,tail=zz)");
  } catch (const ArchSpecError& e) {
    EXPECT_EQ(e.kind(), K::Syntax);
    EXPECT_GE(e.offset(), 11u);
  }
}

TEST(LayerNames, Rendering) {
  EXPECT_EQ(LayerName::conv(4, 3).str(), "CONV4_3");
  EXPECT_EQ(LayerName::conv_relu(5, 3).str(), "RL5_3");
  EXPECT_EQ(LayerName::fc(6).str(), "FC6");
  EXPECT_EQ(LayerName::fc_relu(7).str(), "RL7");
  EXPECT_EQ(parse_layer_name("CONV4_3").str(), "CONV4_3");
  EXPECT_EQ(parse_layer_name("RL6").str(), "RL6");
}

// ---- single-stream builders ----

TEST(Appearance, LayerListing) {
  const NetworkGraph g = build_appearance_cnn(ScaleConfig{});
  std::vector<std::string> trainable;
  for (const auto& r : list_layers(g))
    if (r.parameters) trainable.push_back(r.name);
  ASSERT_EQ(trainable.size(), 16u);  // 13 CONV + 3 FC
  EXPECT_EQ(trainable.front(), "CONV1_1:app");
  EXPECT_EQ(trainable[12], "CONV5_3:app");
  EXPECT_EQ(trainable[13], "FC6:app");
  EXPECT_EQ(trainable[15], "FC8:app");
  EXPECT_EQ(g.layers.back().out_shape, Shape{14});
  EXPECT_EQ(g.class_count, 14u);
}

TEST(Appearance, ParameterCountClosedForm) {
  // Independent count: sum over conv layers of K*C*9+K, then FC layers.
  const ScaleConfig c;
  std::size_t n = 0, cin = 3;
  const std::size_t k[] = {8, 8, 16, 16, 32, 32, 32, 64, 64, 64, 64, 64, 64};
  for (std::size_t K : k) n += K * cin * 9 + K, cin = K;
  n += 128 * (64 * 2 * 2) + 128 + 128 * 128 + 128 + 14 * 128 + 14;
  EXPECT_EQ(n, 281782u);
  EXPECT_EQ(build_appearance_cnn(c).parameter_count(), n);
  EXPECT_EQ(appearance_parameter_count(c), n);
  EXPECT_EQ(build_appearance_cnn(tiny()).parameter_count(), appearance_parameter_count(tiny()));
}

TEST(Appearance, MatchesManualComposition) {
  const ScaleConfig c = tiny();
  NetworkGraph g = build_appearance_cnn(c, 9);
  std::mt19937_64 rng(4);
  const Tensor x = random_image(c, rng);
  const Tensor got = predict(g, {{x}, {}}).at(0);

  // Walk the parameters in order and compose the ops by hand.
  Tape tape;
  auto params = g.parameter_tensors();
  std::size_t p = 0;
  Var v = tape.constant(x);
  for (std::size_t grp = 0; grp < 5; ++grp) {
    for (std::size_t i = 0; i < c.convs_per_group[grp]; ++i, p += 2)
      v = relu(conv2d(v, tape.parameter(*params[p]), tape.parameter(*params[p + 1])));
    v = maxpool2(v);
  }
  v = flatten(v);
  v = relu(linear(v, tape.parameter(*params[p]), tape.parameter(*params[p + 1])));
  v = relu(linear(v, tape.parameter(*params[p + 2]), tape.parameter(*params[p + 3])));
  v = softmax(linear(v, tape.parameter(*params[p + 4]), tape.parameter(*params[p + 5])));
  ASSERT_EQ(p + 6, params.size());
  for (std::size_t i = 0; i < 14; ++i) EXPECT_NEAR(got[i], v.value()[i], 1e-14);
}

TEST(Tm, ThirteenClassesSameSkeleton) {
  const NetworkGraph tm = build_tm_cnn(ScaleConfig{});
  const NetworkGraph app = build_appearance_cnn(ScaleConfig{});
  EXPECT_EQ(tm.layers.back().out_shape, Shape{13});
  ASSERT_EQ(tm.layers.size(), app.layers.size());
  for (std::size_t i = 0; i + 2 < tm.layers.size(); ++i) {
    EXPECT_EQ(tm.layers[i].name.str(), app.layers[i].name.str());
    EXPECT_EQ(tm.layers[i].out_shape, app.layers[i].out_shape);
  }
}

TEST(Tm, ZeroImageGivesFiniteSimplex) {
  NetworkGraph g = build_tm_cnn(ScaleConfig{});
  const Tensor p = predict(g, {{}, {Tensor({3, 64, 64})}}).at(0);
  EXPECT_TRUE(p.all_finite());
  expect_simplex(p);
}

TEST(St, TwentyFramesTwentyDistributions) {
  const ScaleConfig c = tiny();
  NetworkGraph g = build_st_cnn_lstm(c);
  std::mt19937_64 rng(2);
  GraphInput in = random_input(c, 20, rng);
  in.app.clear();
  const auto out = predict(g, in);
  ASSERT_EQ(out.size(), 20u);
  for (const auto& p : out) expect_simplex(p);
  const auto h = g.find(LayerName::lstm(static_cast<int>(c.lstm_layers), Stream::Aff));
  ASSERT_TRUE(h);
  EXPECT_EQ(g.layers[*h].out_shape, Shape{c.lstm_hidden});
}

TEST(St, SingleFrameIsOneStep) {
  const ScaleConfig c = tiny();
  NetworkGraph g = build_st_cnn_lstm(c);
  std::mt19937_64 rng(5);
  GraphInput in = random_input(c, 3, rng);
  in.app.clear();
  const auto three = predict(g, in);
  in.aff.resize(1);
  const auto one = predict(g, in);
  ASSERT_EQ(one.size(), 1u);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_EQ(one[0][i], three[0][i]);
}

// ---- fused topologies ----

TEST(Fused, TableRowsMatchGoldenStructure) {
  const auto golden = testing::read_topology_fixture(SOREC_FIXTURE_DIR "/topology.txt");
  ASSERT_EQ(golden.size(), testing::table_specs().size());
  for (const auto& text : testing::table_specs()) {
    const NetworkGraph g = build_fused(parse_arch_spec(text), ScaleConfig{});
    ASSERT_TRUE(golden.count(text)) << text;
    EXPECT_EQ(testing::structural_summary(g), golden.at(text)) << text;
  }
}

TEST(Fused, LateConvTailComposition) {
  // stack -> conv1x1 -> RL -> FC -> RL -> FC -> softmax
  const NetworkGraph g = build_fused(parse_arch_spec("GTM_LS(RL5_3,tail=1c2f)"), ScaleConfig{});
  std::vector<LayerKind> tail;
  bool after = false;
  for (const auto& l : g.layers) {
    after = after || l.junction;
    if (after) tail.push_back(l.name.kind);
  }
  const std::vector<LayerKind> want{LayerKind::Concat, LayerKind::Conv, LayerKind::Relu, LayerKind::FC,
                                    LayerKind::Relu,   LayerKind::FC,   LayerKind::Softmax};
  EXPECT_EQ(tail, want);
  const auto conv = g.find(LayerName::conv(5, 4, Stream::Fused));
  ASSERT_TRUE(conv);
  EXPECT_EQ(g.layers[*conv].pad, 0u);
  EXPECT_EQ(g.layers[*conv].params[0].dim(2), 1u);
}

TEST(Fused, ChannelStackAddsChannels) {
  for (const auto& text : testing::table_specs()) {
    const NetworkGraph g = build_fused(parse_arch_spec(text), ScaleConfig{});
    for (const auto& l : g.layers) {
      if (!l.junction) continue;
      std::size_t channels = 0;
      for (std::size_t in : l.inputs) {
        const Shape& s = g.layers[in].out_shape;
        channels += s[0];
        if (s.size() == 3) EXPECT_EQ(Shape(s.begin() + 1, s.end()), Shape(l.out_shape.begin() + 1, l.out_shape.end()));
      }
      EXPECT_EQ(l.out_shape[0], channels) << text;
    }
  }
}

TEST(Fused, MismatchedSpatialDimsRejected) {
  try {
    build_fused(parse_arch_spec("GTM_SSL(RL4_3:app,RL5_1:aff)"), ScaleConfig{});
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_TRUE(e.axis() == "height" || e.axis() == "width") << e.axis();
  }
}

TEST(Fused, NoAffordanceLayerAfterLastJunction) {
  for (const auto& text : testing::table_specs()) {
    const NetworkGraph g = build_fused(parse_arch_spec(text), ScaleConfig{});
    std::size_t last = 0;
    for (std::size_t i = 0; i < g.layers.size(); ++i)
      if (g.layers[i].junction) last = i;
    for (std::size_t i = last; i < g.layers.size(); ++i) EXPECT_EQ(g.layers[i].name.stream, Stream::Fused) << text;

    // Every layer reaches the output: no dangling branches.
    std::vector<bool> live(g.layers.size(), false);
    live.back() = true;
    for (std::size_t i = g.layers.size(); i-- > 0;)
      if (live[i])
        for (std::size_t in : g.layers[i].inputs) live[in] = true;
    for (std::size_t i = 0; i < g.layers.size(); ++i) EXPECT_TRUE(live[i]) << text << " " << g.layers[i].name.qualified();
  }
}

TEST(Fused, EveryParsedSpecBuildsOrRaisesDimensionError) {
  const char* convs[] = {"RL1_1", "RL1_2", "RL2_1", "RL2_2", "RL3_1", "RL3_3", "RL4_1", "RL4_3", "RL5_1", "RL5_3"};
  std::size_t built = 0, rejected = 0;
  for (const char* a : convs)
    for (const char* f : convs) {
      const std::string text = std::string("GTM_SSL(") + a + ":app," + f + ":aff)";
      try {
        const NetworkGraph g = build_fused(parse_arch_spec(text), tiny());
        EXPECT_FALSE(g.empty());
        ++built;
      } catch (const DimensionError&) {
        ++rejected;
      }
    }
  EXPECT_GT(built, 0u);
  EXPECT_GT(rejected, 0u);
}

TEST(Fused, GtmOutputsOneDistribution) {
  const ScaleConfig c = tiny();
  std::mt19937_64 rng(3);
  for (const char* text : {"GTM_LS(FC6)", "GTM_SML(RL5_2:app,RL5_2:aff,RL6)", "GTM_SSL(RL3_2:app,RL3_1:aff)"}) {
    NetworkGraph g = build_fused(parse_arch_spec(text), c);
    const auto out = predict(g, random_input(c, 1, rng));
    ASSERT_EQ(out.size(), 1u) << text;
    EXPECT_EQ(out[0].size(), 14u);
    expect_simplex(out[0]);
  }
}

TEST(Fused, DeterministicUnderSeed) {
  const ScaleConfig c = tiny();
  std::mt19937_64 rng(6);
  const GraphInput in = random_input(c, 4, rng);
  NetworkGraph a = build_fused(parse_arch_spec("GST_LA(tau=2)"), c, 11);
  NetworkGraph b = build_fused(parse_arch_spec("GST_LA(tau=2)"), c, 11);
  const auto pa = predict(a, in), pb = predict(b, in);
  ASSERT_EQ(pa.size(), 4u);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(pa[t].values(), pb[t].values());
}

TEST(Fused, AsyncZeroDelayEqualsSync) {
  const ScaleConfig c = tiny();
  FusionSpec la = parse_arch_spec("GST_LA(tau=1)");
  la.delay_tau = 0;
  NetworkGraph g_la = build_fused(la, c, 21);
  NetworkGraph g_ls = build_fused(parse_arch_spec("GST_LS()"), c, 21);
  std::mt19937_64 rng(8);
  const GraphInput in = random_input(c, 5, rng);

  Tape t1, t2;
  const ForwardTrace a = forward(t1, g_la, in), b = forward(t2, g_ls, in);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(a.probs[t].value().values(), b.probs[t].value().values());

  GradSink s1, s2;
  t1.backward(sequence_loss(a, 3), &s1);
  t2.backward(sequence_loss(b, 3), &s2);
  const auto p1 = g_la.parameter_tensors(), p2 = g_ls.parameter_tensors();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const auto* g1 = s1.find(p1[i]);
    const auto* g2 = s2.find(p2[i]);
    ASSERT_TRUE(g1 && g2);
    EXPECT_EQ(*g1, *g2) << "parameter " << i;
  }
}

TEST(Fused, AsyncDelayShiftsAffordanceState) {
  // With tau = 2 the first two frames see the zero state, so their outputs do
  // not depend on the affordance frames at all.
  const ScaleConfig c = tiny();
  NetworkGraph g = build_fused(parse_arch_spec("GST_LA(tau=2)"), c, 5);
  std::mt19937_64 rng(10);
  GraphInput in = random_input(c, 4, rng);
  const auto before = predict(g, in);
  for (auto& f : in.aff) f = random_image(c, rng);
  const auto after = predict(g, in);
  EXPECT_EQ(before[0].values(), after[0].values());
  EXPECT_EQ(before[1].values(), after[1].values());
  EXPECT_NE(before[2].values(), after[2].values());
}

TEST(ListLayers, EmptyGraph) { EXPECT_TRUE(list_layers(NetworkGraph{}).empty()); }

TEST(ListLayers, SmlJunctionPositions) {
  const NetworkGraph g = build_fused(parse_arch_spec("GTM_SML(RL5_3:app,RL5_3:aff,RL6)"), ScaleConfig{});
  std::vector<std::vector<std::string>> junctions;
  for (const auto& r : list_layers(g))
    if (r.junction) junctions.push_back(r.inputs);
  ASSERT_EQ(junctions.size(), 2u);
  EXPECT_EQ(junctions[0], (std::vector<std::string>{"RL5_3:app", "RL5_3:aff"}));
  EXPECT_EQ(junctions[1], (std::vector<std::string>{"RL6:fused", "RL6:aff"}));
}

TEST(GradCheck, TinySmlGraph) {
  const ScaleConfig c = tiny();
  NetworkGraph g = build_fused(parse_arch_spec("GTM_SML(RL5_2:app,RL5_2:aff,RL6)"), c);
  std::mt19937_64 rng(12);
  const GraphInput in = random_input(c, 1, rng);
  auto loss = [&](Tape& t) { return sequence_loss(forward(t, g, in), 4); };
  const GradCheckReport r = grad_check(loss, g.parameters(), 1e-3, {.directions_per_tensor = 2});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

}  // namespace
}  // namespace sorec
