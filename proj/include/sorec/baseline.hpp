// Probabilistic fusion baselines over trained single-stream networks:
// product rule on posteriors, Gaussian naive Bayes and a one-vs-rest linear
// SVM on concatenated RL7 features.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sorec/taxonomy.hpp"
#include "sorec/train_eval.hpp"

namespace sorec {

using Matrix = std::vector<std::vector<double>>;

/// L[o][a] = valid(o,a) / colsum(a): P(object | affordance), uniform over the
/// objects that afford `a`.
inline Matrix lifting_matrix(const std::vector<std::vector<bool>>& valid) {
  if (valid.empty()) throw std::invalid_argument("lifting_matrix: empty validity matrix");
  const std::size_t O = valid.size(), A = valid.front().size();
  Matrix L(O, std::vector<double>(A, 0.0));
  for (std::size_t a = 0; a < A; ++a) {
    std::size_t col = 0;
    for (std::size_t o = 0; o < O; ++o) col += valid[o].at(a) ? 1 : 0;
    if (col == 0) continue;
    for (std::size_t o = 0; o < O; ++o)
      if (valid[o][a]) L[o][a] = 1.0 / static_cast<double>(col);
  }
  return L;
}

inline std::vector<std::vector<bool>> taxonomy_validity() {
  std::vector<std::vector<bool>> v(Taxonomy::kObjects, std::vector<bool>(Taxonomy::kAffordances));
  for (std::size_t o = 0; o < Taxonomy::kObjects; ++o)
    for (std::size_t a = 0; a < Taxonomy::kAffordances; ++a) v[o][a] = Taxonomy::is_valid(o, a);
  return v;
}

inline const Matrix& taxonomy_lifting() {
  static const Matrix L = lifting_matrix(taxonomy_validity());
  return L;
}

/// obj_post[o] * sum_a L[o][a] aff_post[a], renormalized. With zero total mass
/// the object posterior is returned unchanged and `*fell_back` is set.
inline std::vector<double> product_rule_fuse(const std::vector<double>& obj_post, const std::vector<double>& aff_post,
                                             const Matrix& lift, bool* fell_back = nullptr) {
  if (lift.size() != obj_post.size()) throw DimensionError("product_rule_fuse: object width mismatch", "class");
  std::vector<double> fused(obj_post.size());
  double total = 0;
  for (std::size_t o = 0; o < obj_post.size(); ++o) {
    if (lift[o].size() != aff_post.size()) throw DimensionError("product_rule_fuse: affordance width mismatch", "class");
    double lifted = 0;
    for (std::size_t a = 0; a < aff_post.size(); ++a) lifted += lift[o][a] * aff_post[a];
    fused[o] = obj_post[o] * lifted;
    total += fused[o];
  }
  if (fell_back) *fell_back = !(total > 0.0);
  if (!(total > 0.0)) return obj_post;
  for (double& f : fused) f /= total;
  return fused;
}

inline std::vector<double> product_rule_fuse(const std::vector<double>& obj_post, const std::vector<double>& aff_post,
                                             bool* fell_back = nullptr) {
  return product_rule_fuse(obj_post, aff_post, taxonomy_lifting(), fell_back);
}

// ---- features ----

struct FeaturePair {
  std::vector<double> app_feat, aff_feat;
  std::size_t label = 0;

  std::vector<double> joined() const {
    std::vector<double> v = app_feat;
    v.insert(v.end(), aff_feat.begin(), aff_feat.end());
    return v;
  }
};

/// RL7 of a single-image network, or the last LSTM layer of a temporal one.
inline std::size_t feature_layer(const NetworkGraph& g) {
  if (g.temporal) {
    for (std::size_t i = g.layers.size(); i-- > 0;)
      if (g.layers[i].name.kind == LayerKind::Lstm) return i;
  }
  for (Stream s : {Stream::App, Stream::Aff})
    if (auto i = g.find(LayerName::fc_relu(7, s))) return *i;
  throw std::invalid_argument("graph '" + g.description + "' has no RL7 or LSTM feature layer");
}

/// Feature-layer activation at the final frame under the center crop.
inline std::vector<double> extract_features(NetworkGraph& g, const Sample& s, std::size_t side) {
  const std::size_t layer = feature_layer(g);
  Tape tape;
  const ForwardTrace tr = forward(tape, g, sample_input(s, side, nullptr));
  return tr.layers.back()[layer].value().values();
}

// ---- naive Bayes ----

struct NbModel {
  Matrix mean, var;  // [class][feature]
  std::vector<double> prior;
  double variance_floor = 1e-6;
  std::vector<std::string> warnings;
};

inline NbModel nb_fit(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y, std::size_t classes,
                      double variance_floor = 1e-6) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("nb_fit: need matching, non-empty features and labels");
  const std::size_t D = x.front().size();
  NbModel m;
  m.variance_floor = variance_floor;
  m.mean.assign(classes, std::vector<double>(D, 0.0));
  m.var.assign(classes, std::vector<double>(D, 0.0));
  std::vector<std::size_t> n(classes, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != D) throw DimensionError("nb_fit: feature widths differ", "feature");
    const std::size_t c = y[i];
    if (c >= classes) throw std::out_of_range("nb_fit: label out of range");
    ++n[c];
    for (std::size_t d = 0; d < D; ++d) m.mean[c][d] += x[i][d];
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (n[c])
      for (double& v : m.mean[c]) v /= static_cast<double>(n[c]);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t d = 0; d < D; ++d) {
      const double e = x[i][d] - m.mean[y[i]][d];
      m.var[y[i]][d] += e * e;
    }
  for (std::size_t c = 0; c < classes; ++c) {
    if (n[c] < 2)
      m.warnings.push_back("class " + std::to_string(c) + " has " + std::to_string(n[c]) +
                           " training samples; variances set to the floor");
    for (double& v : m.var[c]) v = std::max(n[c] ? v / static_cast<double>(n[c]) : 0.0, variance_floor);
    m.prior.push_back(static_cast<double>(n[c]) / static_cast<double>(x.size()));
  }
  return m;
}

/// Per-class log prior plus Gaussian log likelihood. Classes without
/// training samples score -inf.
inline std::vector<double> nb_log_scores(const NbModel& m, const std::vector<double>& x) {
  constexpr double log_2pi = 1.8378770664093453;
  std::vector<double> s(m.prior.size());
  for (std::size_t c = 0; c < s.size(); ++c) {
    if (m.prior[c] <= 0.0) {
      s[c] = -std::numeric_limits<double>::infinity();
      continue;
    }
    if (x.size() != m.mean[c].size()) throw DimensionError("nb_predict: feature width mismatch", "feature");
    double l = std::log(m.prior[c]);
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double e = x[d] - m.mean[c][d];
      l -= 0.5 * (log_2pi + std::log(m.var[c][d]) + e * e / m.var[c][d]);
    }
    s[c] = l;
  }
  return s;
}

/// Class posterior: softmax of the log scores.
inline std::vector<double> nb_predict(const NbModel& m, const std::vector<double>& x) {
  std::vector<double> s = nb_log_scores(m, x);
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0;
  for (double& v : s) z += v = std::exp(v - mx);
  for (double& v : s) v /= z;
  return s;
}

// ---- linear SVM ----

struct SvmOptions {
  std::size_t epochs = 200;
  double lr = 1e-2;
  double reg = 1e-4;
  std::uint64_t seed = 1;
};

struct SvmModel {
  Matrix w;  // [class][feature]
  std::vector<double> b;
};

/// One-vs-rest hinge loss with L2 penalty, per-sample subgradient steps.
inline SvmModel svm_fit(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y,
                        std::size_t classes, const SvmOptions& opt = {}) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("svm_fit: need matching, non-empty features and labels");
  const std::size_t D = x.front().size();
  SvmModel m;
  m.w.assign(classes, std::vector<double>(D, 0.0));
  m.b.assign(classes, 0.0);
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      if (x[i].size() != D) throw DimensionError("svm_fit: feature widths differ", "feature");
      for (std::size_t c = 0; c < classes; ++c) {
        const double t = y[i] == c ? 1.0 : -1.0;
        auto& w = m.w[c];
        double margin = m.b[c];
        for (std::size_t d = 0; d < D; ++d) margin += w[d] * x[i][d];
        const bool active = t * margin < 1.0;
        for (std::size_t d = 0; d < D; ++d) w[d] -= opt.lr * (opt.reg * w[d] - (active ? t * x[i][d] : 0.0));
        if (active) m.b[c] += opt.lr * t;
      }
    }
  }
  return m;
}

inline std::vector<double> svm_margins(const SvmModel& m, const std::vector<double>& x) {
  std::vector<double> out(m.w.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (x.size() != m.w[c].size()) throw DimensionError("svm_predict: feature width mismatch", "feature");
    out[c] = m.b[c];
    for (std::size_t d = 0; d < x.size(); ++d) out[c] += m.w[c][d] * x[d];
  }
  return out;
}

inline std::size_t svm_predict(const SvmModel& m, const std::vector<double>& x) { return argmax(svm_margins(m, x)); }

// ---- end-to-end ----

enum class BaselineMethod { Product, Bayes, Svm };

inline const char* method_name(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::Product: return "product";
    case BaselineMethod::Bayes: return "bayes";
    case BaselineMethod::Svm: return "svm";
  }
  return "?";
}

/// Runs one baseline with a trained appearance network and a trained
/// affordance network (TM or ST). Bayes and SVM fit on `train_clips`.
inline EvalReport run_baseline(BaselineMethod method, NetworkGraph& app, NetworkGraph& aff,
                               const std::vector<ClipStreams>& train_clips, const std::vector<ClipStreams>& test_clips,
                               std::size_t side, Aggregation agg = Aggregation::AllFrames,
                               const SvmOptions& svm = {}) {
  const auto test_app = make_samples(test_clips, app), test_aff = make_samples(test_clips, aff);
  std::vector<std::size_t> truth, pred;
  for (const auto& c : test_clips) truth.push_back(c.object);
  const std::string name = method_name(method);
  if (method == BaselineMethod::Product) {
    for (std::size_t i = 0; i < test_clips.size(); ++i)
      pred.push_back(argmax(product_rule_fuse(classify(app, test_app[i], side, agg),
                                              classify(aff, test_aff[i], side, agg))));
    return EvalReport::from_predictions(truth, pred, kObjectClasses, name);
  }

  auto features = [&](const std::vector<ClipStreams>& clips) {
    const auto sa = make_samples(clips, app), sf = make_samples(clips, aff);
    std::vector<std::vector<double>> x;
    for (std::size_t i = 0; i < clips.size(); ++i)
      x.push_back(FeaturePair{extract_features(app, sa[i], side), extract_features(aff, sf[i], side), clips[i].object}
                      .joined());
    return x;
  };
  const auto x_train = features(train_clips), x_test = features(test_clips);
  std::vector<std::size_t> y_train;
  for (const auto& c : train_clips) y_train.push_back(c.object);
  if (method == BaselineMethod::Bayes) {
    const NbModel m = nb_fit(x_train, y_train, kObjectClasses);
    for (const auto& x : x_test) pred.push_back(argmax(nb_predict(m, x)));
  } else {
    const SvmModel m = svm_fit(x_train, y_train, kObjectClasses, svm);
    for (const auto& x : x_test) pred.push_back(svm_predict(m, x));
  }
  return EvalReport::from_predictions(truth, pred, kObjectClasses, name);
}

}  // namespace sorec
