// Training protocol (NLL, momentum SGD, reduce-on-plateau), frame
// aggregation and confusion-matrix evaluation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sorec/dataset.hpp"
#include "sorec/errors.hpp"
#include "sorec/netgraph.hpp"
#include "sorec/taxonomy.hpp"

namespace sorec {

struct TrainConfig {
  double lr = 5e-3;
  double momentum = 0.9;
  double lr_decay_factor = 0.5;
  double plateau_threshold = 1e-4;  // absolute improvement that resets the counter
  std::size_t plateau_patience = 3;
  std::size_t epochs = 30;
  std::size_t crop_side = 64;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("invalid TrainConfig: " + m); };
    if (!(lr > 0.0)) bad("lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) bad("momentum must lie in [0,1)");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) bad("lr_decay_factor must lie in (0,1)");
    if (plateau_patience < 1) bad("plateau_patience must be at least 1");
    if (crop_side == 0) bad("crop_side must be positive");
    if (batch_size == 0) bad("batch_size must be positive");
  }
};

// ---- cropping ----

struct CropOffset {
  std::size_t x = 0, y = 0;
};

inline CropOffset random_crop_offset(std::size_t w, std::size_t h, std::size_t side, std::mt19937_64& rng) {
  if (side == 0 || side > w || side > h)
    throw DimensionError("crop side " + std::to_string(side) + " does not fit a " + std::to_string(w) + "x" +
                             std::to_string(h) + " image",
                         "crop");
  std::uniform_int_distribution<std::size_t> dx(0, w - side), dy(0, h - side);
  const std::size_t x = dx(rng);
  return {x, dy(rng)};
}

template <class T>
Image<T> random_crop(const Image<T>& img, std::size_t side, std::mt19937_64& rng) {
  const CropOffset o = random_crop_offset(img.width, img.height, side, rng);
  return crop(img, CropWindow{o.x, o.y, side});
}

/// (3, side, side) tensor scaled to [0,1] from the window at `o`.
inline Tensor image_tensor(const RgbImage& img, CropOffset o, std::size_t side) {
  if (img.channels != 3) throw DimensionError("network images must have 3 channels", "channel");
  if (o.x + side > img.width || o.y + side > img.height) throw DimensionError("crop outside image", "crop");
  Tensor t({3, side, side});
  auto d = t.data();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) d[(c * side + y) * side + x] = img.at(o.x + x, o.y + y, c) / 255.0;
  return t;
}

// ---- samples ----

/// One labelled network input. Images are uncropped front-end maps; every
/// image of a sample shares one crop window.
struct Sample {
  std::string id;
  std::vector<RgbImage> app, aff;
  std::size_t label = 0;
};

enum class AffordanceImage { FlowTemplate, HandMap };

/// Builds samples matching `g`'s input slots. Appearance reads object maps,
/// the affordance slot reads the flow template (single-image graphs, or the
/// first hand map if asked) or the hand maps (temporal graphs). Labels are
/// affordances for 13-class graphs and objects otherwise.
inline std::vector<Sample> make_samples(const std::vector<ClipStreams>& clips, const NetworkGraph& g,
                                        AffordanceImage single = AffordanceImage::FlowTemplate) {
  const bool app = g.uses_slot(0), aff = g.uses_slot(1);
  std::vector<Sample> out;
  out.reserve(clips.size());
  for (const auto& c : clips) {
    Sample s;
    s.id = c.id;
    s.label = g.class_count == kAffordanceClasses ? c.affordance : c.object;
    const StreamSet& st = c.streams;
    if (app) {
      if (st.object_maps.empty()) throw DataError("clip '" + c.id + "' has no object maps");
      if (g.temporal) s.app = st.object_maps;
      else s.app = {st.object_maps.front()};
    }
    if (aff) {
      if (g.temporal) {
        if (st.hand_maps.empty()) throw DataError("clip '" + c.id + "' has no hand maps");
        s.aff = st.hand_maps;
      } else if (single == AffordanceImage::HandMap) {
        if (st.hand_maps.empty()) throw DataError("clip '" + c.id + "' has no hand maps");
        s.aff = {st.hand_maps.front()};
      } else {
        s.aff = {st.flow_template};
      }
    }
    if (g.temporal && app && aff && s.app.size() != s.aff.size())
      throw DataError("clip '" + c.id + "': object and hand sequences differ in length");
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {
inline const RgbImage& first_image(const Sample& s) {
  if (!s.app.empty()) return s.app.front();
  if (!s.aff.empty()) return s.aff.front();
  throw DimensionError("sample '" + s.id + "' has no images", "input");
}
}  // namespace detail

/// Network input with a random crop (training) or the center crop (rng == nullptr).
inline GraphInput sample_input(const Sample& s, std::size_t side, std::mt19937_64* rng) {
  const RgbImage& ref = detail::first_image(s);
  CropOffset o;
  if (rng) {
    o = random_crop_offset(ref.width, ref.height, side, *rng);
  } else {
    const CropWindow w = center_window(ref.width, ref.height, side);
    o = {w.x, w.y};
  }
  GraphInput in;
  for (const auto& im : s.app) in.app.push_back(image_tensor(im, o, side));
  for (const auto& im : s.aff) in.aff.push_back(image_tensor(im, o, side));
  return in;
}

// ---- scheduler ----

struct PlateauState {
  double lr = 5e-3;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;  // epochs since the last improvement
  std::size_t decays = 0;
};

/// Feeds one validation loss; returns true when the lr was decayed.
inline bool lr_scheduler_step(double val_loss, PlateauState& st, const TrainConfig& cfg) {
  if (val_loss < st.best - cfg.plateau_threshold) {
    st.best = val_loss;
    st.stale = 0;
    return false;
  }
  if (++st.stale < cfg.plateau_patience) return false;
  st.lr *= cfg.lr_decay_factor;
  st.stale = 0;
  ++st.decays;
  return true;
}

/// lr in effect after each epoch of `history`.
inline std::vector<double> lr_schedule(const std::vector<double>& history, const TrainConfig& cfg) {
  PlateauState st;
  st.lr = cfg.lr;
  std::vector<double> out;
  for (double v : history) {
    lr_scheduler_step(v, st, cfg);
    out.push_back(st.lr);
  }
  return out;
}

// ---- training ----

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::string layer) : std::runtime_error(what), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double train_loss = 0, val_loss = 0, lr = 0;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool trained = false;  // false when no epoch ran
};

namespace detail {

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// First layer (topological order) with non-finite parameters or outputs.
inline std::string first_non_finite_layer(const NetworkGraph& g, const ForwardTrace& tr) {
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    for (const auto& p : g.layers[i].params)
      if (!all_finite(p.data())) return g.layers[i].name.qualified();
    for (const auto& frame : tr.layers)
      if (!all_finite(frame[i].value().data())) return g.layers[i].name.qualified();
  }
  return "loss";
}

inline double sample_loss(NetworkGraph& g, const Sample& s, std::size_t side) {
  Tape tape;
  const ForwardTrace tr = forward(tape, g, sample_input(s, side, nullptr));
  return sequence_loss(tr, s.label).value()[0];
}

}  // namespace detail

/// Mean NLL over `set` with center crops.
inline double mean_loss(NetworkGraph& g, const std::vector<Sample>& set, std::size_t side) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0;
  for (const auto& s : set) total += detail::sample_loss(g, s, side);
  return total / static_cast<double>(set.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training; leaves `g` holding the parameters of the epoch with
/// the lowest validation loss (training loss when `val` is empty).
inline TrainResult train(NetworkGraph& g, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (g.empty()) throw std::invalid_argument("train on an empty graph");
  TrainResult res;
  if (cfg.epochs == 0) return res;
  if (train_set.empty()) throw DataError("no training samples");

  std::mt19937_64 rng(cfg.seed);
  const std::vector<Tensor*> params = g.parameter_tensors();
  OptimState opt = make_optim_state(params, cfg.lr, cfg.momentum);
  PlateauState sched;
  sched.lr = cfg.lr;
  std::vector<Tensor> best;
  for (const Tensor* p : params) best.push_back(*p);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> grads(params.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      GradSink sink;
      for (std::size_t k = b0; k < b1; ++k) {
        const Sample& s = train_set[order[k]];
        Tape tape;
        const ForwardTrace tr = forward(tape, g, sample_input(s, cfg.crop_side, &rng));
        Var loss = sequence_loss(tr, s.label);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) {
          const std::string layer = detail::first_non_finite_layer(g, tr);
          throw TrainingError("non-finite loss at epoch " + std::to_string(e) + " on sample '" + s.id +
                                  "'; first non-finite layer: " + layer,
                              layer);
        }
        epoch_loss += lv;
        tape.backward(loss, &sink);
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (std::size_t i = 0; i < params.size(); ++i) {
        grads[i].assign(params[i]->size(), 0.0);
        if (const auto* gp = sink.find(params[i]))
          for (std::size_t j = 0; j < gp->size(); ++j) grads[i][j] = (*gp)[j] * inv;
      }
      sgd_step(params, grads, opt);
    }

    EpochRecord r;
    r.epoch = e;
    r.train_loss = epoch_loss / static_cast<double>(order.size());
    r.val_loss = mean_loss(g, val_set.empty() ? train_set : val_set, cfg.crop_side);
    if (!std::isfinite(r.val_loss)) {
      Tape tape;
      const auto& s = val_set.empty() ? train_set.front() : val_set.front();
      const ForwardTrace tr = forward(tape, g, sample_input(s, cfg.crop_side, nullptr));
      const std::string layer = detail::first_non_finite_layer(g, tr);
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(e) + "; first non-finite layer: " +
                              layer,
                          layer);
    }
    if (r.val_loss < res.best_val_loss) {
      res.best_val_loss = r.val_loss;
      res.best_epoch = e;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = *params[i];
    }
    lr_scheduler_step(r.val_loss, sched, cfg);
    opt.learning_rate = sched.lr;
    r.lr = sched.lr;
    res.curve.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best[i];
  res.trained = true;
  return res;
}

// ---- evaluation ----

/// Last-frame or mean of per-frame distributions.
inline std::vector<double> aggregate_predictions(const std::vector<std::vector<double>>& per_frame, Aggregation mode) {
  if (per_frame.empty()) throw std::invalid_argument("aggregate_predictions: no frames");
  if (mode == Aggregation::LastFrame) return per_frame.back();
  std::vector<double> mean(per_frame.front().size(), 0.0);
  for (const auto& p : per_frame) {
    if (p.size() != mean.size()) throw DimensionError("aggregate_predictions: frame widths differ", "class");
    for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i];
  }
  for (double& m : mean) m /= static_cast<double>(per_frame.size());
  return mean;
}

/// Index of the maximum; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

/// Aggregated class distribution of one sample under the center crop.
inline std::vector<double> classify(NetworkGraph& g, const Sample& s, std::size_t side, Aggregation mode) {
  std::vector<std::vector<double>> frames;
  for (const Tensor& p : predict(g, sample_input(s, side, nullptr))) frames.push_back(p.values());
  return aggregate_predictions(frames, mode);
}

struct EvalReport {
  std::string name;
  std::size_t total = 0;
  double accuracy = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
  std::vector<double> per_class_accuracy;           // NaN for classes absent from the test set

  static EvalReport from_predictions(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred,
                                     std::size_t classes, std::string name = {}) {
    if (truth.size() != pred.size()) throw std::invalid_argument("EvalReport: truth and prediction counts differ");
    EvalReport r;
    r.name = std::move(name);
    r.total = truth.size();
    r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] >= classes || pred[i] >= classes) throw std::out_of_range("EvalReport: class index out of range");
      ++r.confusion[truth[i]][pred[i]];
    }
    std::size_t hit = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      hit += r.confusion[c][c];
      const std::size_t n = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
      r.per_class_accuracy.push_back(n ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(n)
                                       : std::numeric_limits<double>::quiet_NaN());
    }
    r.accuracy = r.total ? static_cast<double>(hit) / static_cast<double>(r.total) : 0.0;
    return r;
  }

  /// Accuracy restricted to samples whose true class is in `classes`.
  double subset_accuracy(const std::vector<std::size_t>& classes) const {
    std::size_t hit = 0, n = 0;
    for (std::size_t c : classes) {
      hit += confusion.at(c).at(c);
      n += std::accumulate(confusion[c].begin(), confusion[c].end(), std::size_t{0});
    }
    return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
  }
};

inline EvalReport evaluate(NetworkGraph& g, const std::vector<Sample>& test, Aggregation mode, std::size_t side,
                           std::string name = {}) {
  std::vector<std::size_t> truth, pred;
  for (const auto& s : test) {
    truth.push_back(s.label);
    pred.push_back(argmax(classify(g, s, side, mode)));
  }
  return EvalReport::from_predictions(truth, pred, g.class_count, std::move(name));
}

}  // namespace sorec
