// Named-layer network graphs: the VGG-style appearance and template-matching
// CNNs, the CNN-LSTM spatio-temporal stream, and every GTM / GST fusion
// topology addressable through FusionSpec.
//
// A graph is a topologically ordered list of layers. Non-temporal graphs see
// one frame per input slot; temporal graphs are evaluated once per frame with
// LSTM state and delay buffers carried between frames.
#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sorec/arch_spec.hpp"
#include "sorec/autodiff.hpp"
#include "sorec/gradcheck.hpp"
#include "sorec/optim.hpp"

namespace sorec {

inline constexpr std::size_t kObjectClasses = 14;
inline constexpr std::size_t kAffordanceClasses = 13;
inline constexpr std::size_t kSequenceFrames = 20;

struct ScaleConfig {
  std::size_t input_side = 64;
  std::size_t input_channels = 3;
  std::array<std::size_t, 5> group_channels{8, 16, 32, 64, 64};
  std::array<std::size_t, 5> convs_per_group{2, 2, 3, 3, 3};
  std::size_t fc_width = 128;
  std::size_t lstm_layers = 2;
  std::size_t lstm_hidden = 64;

  static ScaleConfig desk() { return {}; }
  /// Full VGG-16 geometry with 3x4096 LSTM layers.
  static ScaleConfig full() {
    ScaleConfig c;
    c.input_side = 224;
    c.group_channels = {64, 128, 256, 512, 512};
    c.fc_width = 4096;
    c.lstm_layers = 3;
    c.lstm_hidden = 4096;
    return c;
  }

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("invalid ScaleConfig: " + m); };
    if (input_side == 0 || input_side % 32 != 0) bad("input_side must be a positive multiple of 32");
    if (input_channels == 0) bad("input_channels must be positive");
    for (std::size_t g = 0; g < 5; ++g) {
      if (group_channels[g] == 0) bad("group_channels must be positive");
      if (convs_per_group[g] == 0) bad("convs_per_group must be positive");
    }
    if (fc_width == 0) bad("fc_width must be positive");
    if (lstm_layers == 0 || lstm_hidden == 0) bad("LSTM geometry must be positive");
  }
};

struct Layer {
  LayerName name;
  std::vector<std::size_t> inputs;
  std::vector<Tensor> params;
  Shape out_shape;          // per frame
  int input_slot = -1;      // Input layers: 0 appearance, 1 affordance
  std::size_t pad = 1;      // Conv
  std::size_t delay = 0;    // Delay
  bool junction = false;    // inter-stream fusion point
};

class NetworkGraph {
 public:
  std::vector<Layer> layers;
  std::size_t class_count = 0;
  bool temporal = false;
  std::string description;

  bool empty() const { return layers.empty(); }
  std::size_t output() const { return layers.size() - 1; }
  std::size_t logits() const { return layers.back().inputs.at(0); }
  bool uses_slot(int slot) const {
    for (const auto& l : layers)
      if (l.name.kind == LayerKind::Input && l.input_slot == slot) return true;
    return false;
  }
  Shape input_shape(int slot) const {
    for (const auto& l : layers)
      if (l.name.kind == LayerKind::Input && l.input_slot == slot) return l.out_shape;
    throw std::out_of_range("graph has no input slot " + std::to_string(slot));
  }

  /// Trainable tensors in layer order, named "<layer>:<stream>/<role>".
  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    for (auto& l : layers) {
      static const char* conv_roles[] = {"weight", "bias"};
      static const char* lstm_roles[] = {"w_x", "w_h", "bias"};
      for (std::size_t i = 0; i < l.params.size(); ++i) {
        const char* role = l.name.kind == LayerKind::Lstm ? lstm_roles[i] : conv_roles[i];
        out.emplace_back(l.name.qualified() + "/" + role, &l.params[i]);
      }
    }
    return out;
  }
  std::vector<Tensor*> parameter_tensors() {
    std::vector<Tensor*> out;
    for (auto& l : layers)
      for (auto& p : l.params) out.push_back(&p);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      for (const auto& p : l.params) n += p.size();
    return n;
  }
  /// Index of the layer with this qualified name, if any.
  std::optional<std::size_t> find(const LayerName& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name) return i;
    return std::nullopt;
  }
};

namespace detail {

class GraphBuilder {
 public:
  GraphBuilder(const ScaleConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) { cfg.validate(); }

  NetworkGraph& graph() { return g_; }
  const ScaleConfig& cfg() const { return cfg_; }
  const Shape& shape(std::size_t node) const { return g_.layers.at(node).out_shape; }

  std::size_t input(int slot, Stream s) {
    Layer l;
    l.name = LayerName::of(LayerKind::Input, s);
    l.input_slot = slot;
    l.out_shape = {cfg_.input_channels, cfg_.input_side, cfg_.input_side};
    return push(std::move(l));
  }

  std::size_t conv(std::size_t from, LayerName name, std::size_t out_ch, std::size_t k) {
    Shape in = shape(from);
    if (in.size() == 1) in = {in[0], 1, 1};
    const std::size_t C = in[0];
    Layer l;
    l.name = name;
    l.inputs = {from};
    l.pad = k / 2;
    l.params.emplace_back(Shape{out_ch, C, k, k});
    l.params.emplace_back(Shape{out_ch});
    kaiming_init(l.params[0], C * k * k, rng_);
    l.out_shape = {out_ch, in[1], in[2]};
    return push(std::move(l));
  }

  std::size_t relu(std::size_t from, LayerName name) {
    Layer l;
    l.name = name;
    l.name.kind = LayerKind::Relu;
    l.inputs = {from};
    l.out_shape = shape(from);
    return push(std::move(l));
  }

  std::size_t pool(std::size_t from, LayerName name) {
    const Shape& in = shape(from);
    if (in.size() != 3 || in[1] % 2 || in[2] % 2)
      throw DimensionError(name.qualified() + ": cannot 2x2-pool " + shape_str(in), "spatial");
    Layer l;
    l.name = name;
    l.inputs = {from};
    l.out_shape = {in[0], in[1] / 2, in[2] / 2};
    return push(std::move(l));
  }

  std::size_t fc(std::size_t from, LayerName name, std::size_t width) {
    const std::size_t n = shape_size(shape(from));
    Layer l;
    l.name = name;
    l.inputs = {from};
    l.params.emplace_back(Shape{width, n});
    l.params.emplace_back(Shape{width});
    kaiming_init(l.params[0], n, rng_);
    l.out_shape = {width};
    return push(std::move(l));
  }

  std::size_t lstm(std::size_t from, LayerName name, std::size_t hidden) {
    const std::size_t n = shape_size(shape(from));
    Layer l;
    l.name = name;
    l.inputs = {from};
    l.params.emplace_back(Shape{4 * hidden, n});
    l.params.emplace_back(Shape{4 * hidden, hidden});
    l.params.emplace_back(Shape{4 * hidden});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double sx = 1.0 / std::sqrt(static_cast<double>(n));
    const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& v : l.params[0].data()) v = sx * u(rng_);
    for (double& v : l.params[1].data()) v = sh * u(rng_);
    // forget-gate bias 1
    for (std::size_t j = hidden; j < 2 * hidden; ++j) l.params[2][j] = 1.0;
    l.out_shape = {hidden};
    return push(std::move(l));
  }

  std::size_t concat(const std::vector<std::size_t>& from, Stream s) {
    const Shape& s0 = shape(from.front());
    Shape out = s0;
    out[0] = 0;
    for (std::size_t f : from) {
      const Shape& si = shape(f);
      if (si.size() != s0.size())
        throw DimensionError("fusion junction joins " + shape_str(si) + " with " + shape_str(s0), "rank");
      for (std::size_t a = 1; a < si.size(); ++a)
        if (si[a] != s0[a])
          throw DimensionError("fusion junction: " + g_.layers[f].name.qualified() + " " + shape_str(si) +
                                   " and " + g_.layers[from.front()].name.qualified() + " " + shape_str(s0) +
                                   " differ in spatial extent",
                               a == 1 ? "height" : "width");
      out[0] += si[0];
    }
    Layer l;
    l.name = LayerName::of(LayerKind::Concat, s);
    l.inputs = from;
    l.out_shape = out;
    l.junction = true;
    return push(std::move(l));
  }

  std::size_t delay(std::size_t from, std::size_t tau, Stream s) {
    Layer l;
    l.name = LayerName::of(LayerKind::Delay, s);
    l.inputs = {from};
    l.delay = tau;
    l.out_shape = shape(from);
    return push(std::move(l));
  }

  std::size_t softmax(std::size_t from, Stream s) {
    Layer l;
    l.name = LayerName::of(LayerKind::Softmax, s);
    l.inputs = {from};
    l.out_shape = shape(from);
    return push(std::move(l));
  }

  /// Canonical VGG layer sequence for one stream: CONVg_i/RLg_i..., POOLg, FC6, RL6, FC7, RL7, FC8, SOFTMAX.
  std::vector<LayerName> vgg_positions(Stream s) const {
    std::vector<LayerName> p;
    for (int g = 1; g <= 5; ++g) {
      for (int i = 1; i <= static_cast<int>(cfg_.convs_per_group[g - 1]); ++i) {
        p.push_back(LayerName::conv(g, i, s));
        p.push_back(LayerName::conv_relu(g, i, s));
      }
      p.push_back(LayerName::pool(g, s));
    }
    for (int k = 6; k <= 7; ++k) {
      p.push_back(LayerName::fc(k, s));
      p.push_back(LayerName::fc_relu(k, s));
    }
    p.push_back(LayerName::fc(8, s));
    p.push_back(LayerName::of(LayerKind::Softmax, s));
    return p;
  }

  std::size_t position_of(const LayerName& name, Stream s) const {
    const auto pos = vgg_positions(s);
    for (std::size_t i = 0; i < pos.size(); ++i)
      if (pos[i].same_position(name)) return i;
    throw DimensionError("unresolved layer name " + name.str() + " for this scale configuration", "layer");
  }

  /// Appends positions (first, last] of stream `s` after node `from`.
  std::size_t extend(std::size_t from, Stream s, std::optional<std::size_t> after, std::size_t last,
                     std::size_t classes) {
    const auto pos = vgg_positions(s);
    std::size_t cur = from;
    for (std::size_t i = after ? *after + 1 : 0; i <= last; ++i) {
      const LayerName& n = pos[i];
      switch (n.kind) {
        case LayerKind::Conv: cur = conv(cur, n, cfg_.group_channels[*n.group - 1], 3); break;
        case LayerKind::Relu: cur = relu(cur, n); break;
        case LayerKind::Pool: cur = pool(cur, n); break;
        case LayerKind::FC: cur = fc(cur, n, *n.index == 8 ? classes : cfg_.fc_width); break;
        case LayerKind::Softmax: cur = softmax(cur, s); break;
        default: break;
      }
    }
    return cur;
  }

  std::size_t last_position() const { return vgg_positions(Stream::App).size() - 1; }

  /// Post-fusion tail: n_conv x (1x1 CONV, RL) then n_fc FC layers (RL between), softmax.
  std::size_t tail(std::size_t from, int conv_group, int conv_start, std::size_t conv_channels, int first_fc, Tail t,
                   std::size_t classes) {
    std::size_t cur = from;
    for (int j = 0; j < t.n_conv1x1; ++j) {
      cur = conv(cur, LayerName::conv(conv_group, conv_start + j, Stream::Fused), conv_channels, 1);
      cur = relu(cur, LayerName::conv_relu(conv_group, conv_start + j, Stream::Fused));
    }
    for (int j = 0; j < t.n_fc; ++j) {
      const bool head = j + 1 == t.n_fc;
      cur = fc(cur, LayerName::fc(first_fc + j, Stream::Fused), head ? classes : cfg_.fc_width);
      if (!head) cur = relu(cur, LayerName::fc_relu(first_fc + j, Stream::Fused));
    }
    return softmax(cur, Stream::Fused);
  }

  /// Stacked LSTM layers LSTM1..L on top of `from`.
  std::size_t lstm_stack(std::size_t from, Stream s) {
    std::size_t cur = from;
    for (std::size_t k = 1; k <= cfg_.lstm_layers; ++k)
      cur = lstm(cur, LayerName::lstm(static_cast<int>(k), s), cfg_.lstm_hidden);
    return cur;
  }

  NetworkGraph finish(std::size_t classes, bool temporal, std::string description) {
    g_.class_count = classes;
    g_.temporal = temporal;
    g_.description = std::move(description);
    return std::move(g_);
  }

 private:
  std::size_t push(Layer l) {
    for (std::size_t in : l.inputs)
      if (in >= g_.layers.size()) throw std::logic_error("layer input out of order");
    g_.layers.push_back(std::move(l));
    return g_.layers.size() - 1;
  }

  ScaleConfig cfg_;
  std::mt19937_64 rng_;
  NetworkGraph g_;
};

}  // namespace detail

/// VGG-style object CNN over colorized object depth maps (14 classes).
inline NetworkGraph build_appearance_cnn(const ScaleConfig& cfg, std::uint64_t seed = 1) {
  detail::GraphBuilder b(cfg, seed);
  const std::size_t in = b.input(0, Stream::App);
  b.extend(in, Stream::App, std::nullopt, b.last_position(), kObjectClasses);
  return b.finish(kObjectClasses, false, "appearance");
}

/// Template-matching affordance CNN over one colorized template image (13 classes).
inline NetworkGraph build_tm_cnn(const ScaleConfig& cfg, std::uint64_t seed = 2) {
  detail::GraphBuilder b(cfg, seed);
  const std::size_t in = b.input(1, Stream::Aff);
  b.extend(in, Stream::Aff, std::nullopt, b.last_position(), kAffordanceClasses);
  return b.finish(kAffordanceClasses, false, "tm");
}

/// Spatio-temporal affordance network: per-frame CNN trunk to RL7, stacked
/// LSTM, per-frame class head.
inline NetworkGraph build_st_cnn_lstm(const ScaleConfig& cfg, std::uint64_t seed = 3) {
  detail::GraphBuilder b(cfg, seed);
  const std::size_t in = b.input(1, Stream::Aff);
  const std::size_t rl7 = b.extend(in, Stream::Aff, std::nullopt, b.position_of(LayerName::fc_relu(7), Stream::Aff),
                                   kAffordanceClasses);
  const std::size_t h = b.lstm_stack(rl7, Stream::Aff);
  const std::size_t head = b.fc(h, LayerName::fc(8, Stream::Aff), kAffordanceClasses);
  b.softmax(head, Stream::Aff);
  return b.finish(kAffordanceClasses, true, "st");
}

/// Wires a fused object-recognition graph for `spec`. Throws DimensionError on
/// unresolvable layers or spatially mismatched CONV-level junctions.
inline NetworkGraph build_fused(const FusionSpec& spec, const ScaleConfig& cfg, std::uint64_t seed = 4) {
  detail::GraphBuilder b(cfg, seed);
  const std::size_t C = kObjectClasses;
  const auto fc_pos = [&](int k) { return b.position_of(LayerName::fc_relu(k), Stream::App); };

  if (spec.gat == Gat::GTM) {
    const std::size_t app_in = b.input(0, Stream::App);
    const std::size_t aff_in = b.input(1, Stream::Aff);
    if (spec.ft == FusionType::LS) {
      LayerName at = spec.fusion_points.at(0).layer;
      // FC-level late fusion joins the rectified activations (FC6 -> RL6)
      if (at.fc_level()) at.kind = LayerKind::Relu;
      const std::size_t p = b.position_of(at, Stream::App);
      const std::size_t a = b.extend(app_in, Stream::App, std::nullopt, p, C);
      const std::size_t f = b.extend(aff_in, Stream::Aff, std::nullopt, p, C);
      const std::size_t j = b.concat({a, f}, Stream::Fused);
      if (at.conv_level()) {
        const int last_conv = static_cast<int>(cfg.convs_per_group[4]);
        if (*at.group != 5 || *at.index != last_conv)
          throw DimensionError("GTM_LS CONV-level fusion is at the last CONV layer (CONV5_" +
                                   std::to_string(last_conv) + "/RL5_" + std::to_string(last_conv) + ")",
                               "layer");
        const Tail t = spec.tail.value_or(Tail{1, 2});
        b.tail(j, 5, last_conv + 1, cfg.group_channels[4], 6, t, C);
      } else {
        const int k = *at.index;
        const Tail t = spec.tail.value_or(Tail{0, 8 - k});
        b.tail(j, k + 1, 1, cfg.fc_width, k + 1, t, C);
      }
    } else if (spec.ft == FusionType::SSL || spec.ft == FusionType::SML) {
      LayerName app_pt, aff_pt;
      std::optional<LayerName> fc_pt;
      for (const auto& fp : spec.fusion_points) {
        if (fp.stream == Stream::App) app_pt = fp.layer;
        else if (fp.stream == Stream::Aff) aff_pt = fp.layer;
        else fc_pt = fp.layer;
      }
      const std::size_t pa = b.position_of(app_pt, Stream::App);
      const std::size_t pf = b.position_of(aff_pt, Stream::Aff);
      const std::size_t a = b.extend(app_in, Stream::App, std::nullopt, pa, C);
      const std::size_t f = b.extend(aff_in, Stream::Aff, std::nullopt, pf, C);
      const std::size_t j = b.concat({a, f}, Stream::Fused);
      if (spec.ft == FusionType::SSL) {
        b.extend(j, Stream::Fused, pa, b.last_position(), C);
      } else {
        const std::size_t pfc = b.position_of(*fc_pt, Stream::App);
        if (pfc <= pa) throw DimensionError("GTM_SML FC-level point must follow the CONV-level point", "layer");
        const std::size_t fused_fc = b.extend(j, Stream::Fused, pa, pfc, C);
        const std::size_t aff_fc = b.extend(f, Stream::Aff, pf, pfc, C);
        const std::size_t j2 = b.concat({fused_fc, aff_fc}, Stream::Fused);
        b.extend(j2, Stream::Fused, pfc, b.last_position(), C);
      }
    } else {
      throw DimensionError("GTM supports LS, SSL and SML fusion", "fusion type");
    }
    return b.finish(C, false, spec.str());
  }

  // GST: per-frame appearance CNN (object maps) and affordance stream (hand maps)
  const std::size_t app_in = b.input(0, Stream::App);
  const std::size_t aff_in = b.input(1, Stream::Aff);
  const std::size_t app7 = b.extend(app_in, Stream::App, std::nullopt, fc_pos(7), C);
  const std::size_t aff7 = b.extend(aff_in, Stream::Aff, std::nullopt, fc_pos(7), C);
  const Tail t = spec.tail.value_or(Tail{0, 2});
  if (spec.ft == FusionType::LS || spec.ft == FusionType::LA) {
    std::size_t h = b.lstm_stack(aff7, Stream::Aff);
    if (spec.ft == FusionType::LA) h = b.delay(h, static_cast<std::size_t>(spec.delay_tau), Stream::Aff);
    const std::size_t j = b.concat({app7, h}, Stream::Fused);
    b.tail(j, 8, 1, cfg.fc_width, 8, t, C);
  } else if (spec.ft == FusionType::SSL) {
    const std::size_t j = b.concat({app7, aff7}, Stream::Fused);
    const std::size_t h = b.lstm_stack(j, Stream::Fused);
    b.tail(h, 8, 1, cfg.fc_width, 8, t, C);
  } else {
    throw DimensionError("GST supports LS, LA and SSL fusion", "fusion type");
  }
  return b.finish(C, true, spec.str());
}

/// Inputs for one sample. Non-temporal graphs read element 0 of each list.
struct GraphInput {
  std::vector<Tensor> app;
  std::vector<Tensor> aff;
};

struct ForwardOptions {
  bool faulty_relu_backward = false;  // negative-control switch for gradient checks
};

struct ForwardTrace {
  std::vector<Var> logits;  // one per frame (one for non-temporal graphs)
  std::vector<Var> probs;
  std::vector<std::vector<Var>> layers;  // [frame][layer]
};

inline ForwardTrace forward(Tape& tape, NetworkGraph& g, const GraphInput& in, const ForwardOptions& opt = {}) {
  if (g.empty()) throw std::invalid_argument("forward on an empty graph");
  const bool need_app = g.uses_slot(0), need_aff = g.uses_slot(1);
  std::size_t T = 1;
  if (g.temporal) {
    if (need_app && need_aff && in.app.size() != in.aff.size())
      throw DimensionError("appearance and affordance sequences differ in length", "frames");
    T = need_app ? in.app.size() : in.aff.size();
    if (T == 0) throw DimensionError("empty frame sequence", "frames");
  } else {
    if ((need_app && in.app.empty()) || (need_aff && in.aff.empty()))
      throw DimensionError("missing input image", "input");
  }

  std::vector<std::vector<Var>> params(g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    for (auto& p : g.layers[i].params) params[i].push_back(tape.parameter(p));

  std::map<std::size_t, LstmState> lstm_state;
  std::map<std::size_t, std::vector<Var>> delay_history;
  ForwardTrace trace;
  std::vector<Var> v(g.layers.size());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      Layer& l = g.layers[i];
      const auto& P = params[i];
      auto x = [&](std::size_t k = 0) { return v[l.inputs[k]]; };
      switch (l.name.kind) {
        case LayerKind::Input: {
          const auto& seq = l.input_slot == 0 ? in.app : in.aff;
          const Tensor& img = seq.at(g.temporal ? t : 0);
          if (img.shape() != l.out_shape)
            throw DimensionError("input " + l.name.qualified() + " expects " + shape_str(l.out_shape) + ", got " +
                                     shape_str(img.shape()),
                                 "input");
          v[i] = tape.constant(img);
          break;
        }
        case LayerKind::Conv: {
          Var xi = x();
          if (xi.shape().size() == 1) xi = reshape(xi, {xi.shape()[0], 1, 1});
          v[i] = conv2d(xi, P[0], P[1], l.pad);
          break;
        }
        case LayerKind::Relu: v[i] = opt.faulty_relu_backward ? debug::faulty_relu(x()) : relu(x()); break;
        case LayerKind::Pool: v[i] = maxpool2(x()); break;
        case LayerKind::FC: {
          Var xi = x();
          if (xi.shape().size() != 1) xi = flatten(xi);
          v[i] = linear(xi, P[0], P[1]);
          break;
        }
        case LayerKind::Lstm: {
          auto it = lstm_state.find(i);
          if (it == lstm_state.end())
            it = lstm_state.emplace(i, zero_lstm_state(tape, l.out_shape[0])).first;
          it->second = lstm_step(x(), it->second, P[0], P[1], P[2]);
          v[i] = it->second.h;
          break;
        }
        case LayerKind::Delay: {
          auto& hist = delay_history[i];
          hist.push_back(x());
          v[i] = t >= l.delay ? hist[t - l.delay] : tape.constant(Tensor(l.out_shape));
          break;
        }
        case LayerKind::Concat: {
          std::vector<Var> parts;
          for (std::size_t k = 0; k < l.inputs.size(); ++k) parts.push_back(x(k));
          v[i] = concat(parts, 0);
          break;
        }
        case LayerKind::Softmax: v[i] = softmax(x()); break;
      }
    }
    trace.logits.push_back(v[g.logits()]);
    trace.probs.push_back(v[g.output()]);
    trace.layers.push_back(v);
  }
  return trace;
}

/// Mean per-frame NLL of `target` through the fused softmax/NLL rule.
inline Var sequence_loss(const ForwardTrace& tr, std::size_t target) {
  Tape& tape = *tr.logits.front().tape;
  Var total = softmax_nll(tr.logits.front(), target);
  for (std::size_t t = 1; t < tr.logits.size(); ++t) total = add(total, softmax_nll(tr.logits[t], target));
  if (tr.logits.size() == 1) return total;
  const double inv = 1.0 / static_cast<double>(tr.logits.size());
  Tensor out({1}, total.value()[0] * inv);
  return tape.record(std::move(out), {total}, [&tape, total, inv](std::span<const double> g) {
    tape.accum(total)[0] += g[0] * inv;
  });
}

/// Per-frame class distributions for one sample.
inline std::vector<Tensor> predict(NetworkGraph& g, const GraphInput& in) {
  Tape tape;
  ForwardTrace tr = forward(tape, g, in);
  std::vector<Tensor> out;
  for (Var p : tr.probs) out.push_back(p.value());
  return out;
}

struct LayerReport {
  std::string name;           // qualified, e.g. "RL5_3:app"
  LayerKind kind;
  Shape out_shape;
  std::vector<std::string> inputs;
  std::size_t parameters = 0;
  bool junction = false;
  std::size_t delay = 0;
};

inline std::vector<LayerReport> list_layers(const NetworkGraph& g) {
  std::vector<LayerReport> out;
  for (const auto& l : g.layers) {
    LayerReport r;
    r.name = l.name.qualified();
    r.kind = l.name.kind;
    r.out_shape = l.out_shape;
    for (std::size_t in : l.inputs) r.inputs.push_back(g.layers[in].name.qualified());
    for (const auto& p : l.params) r.parameters += p.size();
    r.junction = l.junction;
    r.delay = l.delay;
    out.push_back(std::move(r));
  }
  return out;
}

/// One line per layer: "NAME <- INPUTS shape [params] [junction]".
inline std::string render_layers(const NetworkGraph& g) {
  std::ostringstream os;
  for (const auto& r : list_layers(g)) {
    os << r.name;
    if (!r.inputs.empty()) {
      os << " <-";
      for (const auto& i : r.inputs) os << ' ' << i;
    }
    os << ' ' << shape_str(r.out_shape);
    if (r.parameters) os << " params=" << r.parameters;
    if (r.kind == LayerKind::Delay) os << " tau=" << r.delay;
    if (r.junction) os << " junction";
    os << '\n';
  }
  return os.str();
}

/// Closed-form trainable parameter count of the appearance CNN for `cfg`.
inline std::size_t appearance_parameter_count(const ScaleConfig& cfg, std::size_t classes = kObjectClasses) {
  std::size_t n = 0, c_in = cfg.input_channels;
  for (std::size_t g = 0; g < 5; ++g)
    for (std::size_t i = 0; i < cfg.convs_per_group[g]; ++i) {
      n += cfg.group_channels[g] * c_in * 9 + cfg.group_channels[g];
      c_in = cfg.group_channels[g];
    }
  const std::size_t side = cfg.input_side / 32;
  const std::size_t flat = cfg.group_channels[4] * side * side;
  n += cfg.fc_width * flat + cfg.fc_width;
  n += cfg.fc_width * cfg.fc_width + cfg.fc_width;
  n += classes * cfg.fc_width + classes;
  return n;
}

}  // namespace sorec
