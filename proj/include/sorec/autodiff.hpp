// Reverse-mode differentiation tape and the primitive operations used by the
// appearance / affordance networks.
//
// A Tape records one forward pass. Parameter leaves reference caller-owned
// tensors without copying them; after `backward` their gradients are added
// either into the tensor's own grad buffer or into a GradSink.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sorec/tensor.hpp"

namespace sorec {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr; }
};

/// Gradient accumulator keyed by parameter tensor. Lets several forward/backward
/// passes share parameters without writing into them.
class GradSink {
 public:
  void add(const Tensor* param, std::span<const double> g) {
    auto& buf = grads_[param];
    if (buf.empty()) buf.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
  const std::vector<double>* find(const Tensor* param) const {
    auto it = grads_.find(param);
    return it == grads_.end() ? nullptr : &it->second;
  }
  void clear() { grads_.clear(); }

 private:
  std::unordered_map<const Tensor*, std::vector<double>> grads_;
};

class Tape {
 public:
  using Backward = std::function<void(std::span<const double> gout)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(t);
    return {this, nodes_.size() - 1};
  }

  /// Leaf that references `p`. `p` must outlive the tape.
  Var parameter(Tensor& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return {this, it->second};
    Node& n = nodes_.emplace_back();
    n.ref = &p;
    n.param = &p;
    n.requires_grad = true;
    param_ids_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  /// Records an operation output. `fn` receives the upstream gradient and must
  /// accumulate into inputs through `accum`.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    bool req = false;
    for (const Var& v : inputs) req = req || nodes_[v.id].requires_grad;
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = req;
    if (req) n.backward = std::move(fn);
    return {this, nodes_.size() - 1};
  }
  Var record(Tensor value, const std::vector<Var>& inputs, Backward fn) {
    bool req = false;
    for (const Var& v : inputs) req = req || nodes_[v.id].requires_grad;
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = req;
    if (req) n.backward = std::move(fn);
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of `v`, or nullptr when `v` does not need one.
  double* accum(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(value(v.id).size(), 0.0);
    return n.grad.data();
  }

  std::span<const double> grad(Var v) const { return nodes_[v.id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  void backward(Var loss, GradSink* sink = nullptr) {
    if (value(loss.id).size() != 1) throw DimensionError("backward needs a scalar loss", "loss");
    backward_from(loss, std::vector<double>{1.0}, sink);
  }

  /// Reverse pass with an explicit upstream gradient for `out`.
  void backward_from(Var out, const std::vector<double>& seed, GradSink* sink = nullptr) {
    if (!nodes_[out.id].requires_grad) return;
    double* g = accum(out);
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (std::size_t id = out.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(n.grad);
    }
    for (auto& [p, id] : param_ids_) {
      const Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (sink) {
        sink->add(p, n.grad);
      } else {
        auto pg = n.param->grad();
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Piecewise ops (ReLU masks, pooling winners) fold their decisions in
  /// here, so two evaluations with equal signatures took the same branch.
  void note_branch(std::uint64_t word) { branch_ = (branch_ ^ word) * 0x100000001b3ull; }
  std::uint64_t branch_signature() const noexcept { return branch_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
  std::uint64_t branch_ = 0xcbf29ce484222325ull;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(t.shape()),
                         "rank");
}

// cols[(c*k + dy)*k + dx][y*W + x] = in[c][y+dy-pad][x+dx-pad]
inline void im2col(const double* in, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                   std::size_t pad, double* cols) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(H), w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t dy = 0; dy < k; ++dy)
      for (std::size_t dx = 0; dx < k; ++dx) {
        double* row = cols + ((c * k + dy) * k + dx) * H * W;
        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(pad);
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pad);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + oy;
          double* dst = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = in + (c * H + static_cast<std::size_t>(sy)) * W;
          for (std::ptrdiff_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = x + ox;
            dst[x] = (sx < 0 || sx >= w) ? 0.0 : src[sx];
          }
        }
      }
}

inline void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                       std::size_t pad, double* out) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(H), w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t dy = 0; dy < k; ++dy)
      for (std::size_t dx = 0; dx < k; ++dx) {
        const double* row = cols + ((c * k + dy) * k + dx) * H * W;
        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(pad);
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pad);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          double* dst = out + (c * H + static_cast<std::size_t>(sy)) * W;
          const double* src = row + y * w;
          for (std::ptrdiff_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = x + ox;
            if (sx >= 0 && sx < w) dst[sx] += src[x];
          }
        }
      }
}

inline void note_mask(Tape& tape, std::span<const double> x) {
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    word = (word << 1) | (x[i] > 0.0 ? 1u : 0u);
    if (i % 64 == 63 || i + 1 == x.size()) {
      tape.note_branch(word);
      word = 0;
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Square-kernel convolution, stride 1, symmetric zero padding.
/// input (C,H,W), weights (K,C,k,k), bias (K) -> (K, H+2p-k+1, W+2p-k+1).
inline Var conv2d(Var input, Var weights, Var bias, std::size_t pad = 1) {
  Tape& tape = *input.tape;
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  detail::require_rank(x, 3, "conv2d input");
  detail::require_rank(w, 4, "conv2d weights");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t K = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C)
    throw DimensionError("conv2d: weight channels " + std::to_string(w.dim(1)) +
                             " != input channels " + std::to_string(C),
                         "channel");
  if (w.dim(3) != k) throw DimensionError("conv2d: kernel must be square", "kernel");
  if (b.rank() != 1 || b.dim(0) != K)
    throw DimensionError("conv2d: bias length must equal output channels", "bias");
  if (H + 2 * pad < k || W + 2 * pad < k) throw DimensionError("conv2d: kernel larger than input", "spatial");
  if (H + 2 * pad - k + 1 != H || W + 2 * pad - k + 1 != W)
    throw DimensionError("conv2d: only extent-preserving padding is supported", "spatial");

  const std::size_t ckk = C * k * k, hw = H * W;
  const bool direct = (k == 1 && pad == 0);
  std::vector<double> cols;
  if (!direct) {
    cols.resize(ckk * hw);
    detail::im2col(x.data().data(), C, H, W, k, pad, cols.data());
  }
  Tensor out({K, H, W});
  detail::MapMat om(out.data().data(), K, hw);
  detail::CMapMat wm(w.data().data(), K, ckk);
  detail::CMapMat cm(direct ? x.data().data() : cols.data(), ckk, hw);
  om.noalias() = wm * cm;
  for (std::size_t o = 0; o < K; ++o) om.row(o).array() += b[o];

  return tape.record(std::move(out), {input, weights, bias},
                     [&tape, input, weights, bias, C, H, W, K, k, pad, ckk, hw, direct](std::span<const double> g) {
                       const Tensor& x = input.value();
                       const Tensor& w = weights.value();
                       detail::CMapMat gm(g.data(), K, hw);
                       std::vector<double> cols;
                       const double* cp = x.data().data();
                       if (!direct) {
                         cols.resize(ckk * hw);
                         detail::im2col(x.data().data(), C, H, W, k, pad, cols.data());
                         cp = cols.data();
                       }
                       if (double* gw = tape.accum(weights)) {
                         detail::MapMat gwm(gw, K, ckk);
                         gwm.noalias() += gm * detail::CMapMat(cp, ckk, hw).transpose();
                       }
                       // plain loop: Eigen's vectorized sum depends on pointer alignment
                       if (double* gb = tape.accum(bias))
                         for (std::size_t o = 0; o < K; ++o) {
                           double acc = 0;
                           for (std::size_t i = 0; i < hw; ++i) acc += g[o * hw + i];
                           gb[o] += acc;
                         }
                       if (double* gx = tape.accum(input)) {
                         detail::CMapMat wm(w.data().data(), K, ckk);
                         if (direct) {
                           detail::MapMat gxm(gx, ckk, hw);
                           gxm.noalias() += wm.transpose() * gm;
                         } else {
                           std::vector<double> gcols(ckk * hw);
                           detail::MapMat gcm(gcols.data(), ckk, hw);
                           gcm.noalias() = wm.transpose() * gm;
                           detail::col2im_add(gcols.data(), C, H, W, k, pad, gx);
                         }
                       }
                     });
}

/// Per-pixel linear map across channels; weights (K,C,1,1).
inline Var conv1x1(Var input, Var weights, Var bias) {
  if (weights.value().rank() != 4 || weights.value().dim(2) != 1 || weights.value().dim(3) != 1)
    throw DimensionError("conv1x1: weights must be (K,C,1,1)", "kernel");
  return conv2d(input, weights, bias, 0);
}

/// 2x2 non-overlapping max pooling. Ties route to the first element in scan order.
inline Var maxpool2(Var input) {
  Tape& tape = *input.tape;
  const Tensor& x = input.value();
  detail::require_rank(x, 3, "maxpool2 input");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2) throw DimensionError("maxpool2: odd height " + std::to_string(H), "height");
  if (W % 2) throw DimensionError("maxpool2: odd width " + std::to_string(W), "width");
  const std::size_t h2 = H / 2, w2 = W / 2;
  Tensor out({C, h2, w2});
  auto arg = std::make_shared<std::vector<std::size_t>>(C * h2 * w2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t xx = 0; xx < w2; ++xx) {
        const std::size_t base = (c * H + 2 * y) * W + 2 * xx;
        const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
        std::size_t best = cand[0];
        for (std::size_t j = 1; j < 4; ++j)
          if (x[cand[j]] > x[best] || std::isnan(x[cand[j]])) best = cand[j];
        const std::size_t o = (c * h2 + y) * w2 + xx;
        tape.note_branch(best - base);
        out[o] = x[best];
        (*arg)[o] = best;
      }
  return tape.record(std::move(out), {input}, [&tape, input, arg](std::span<const double> g) {
    double* gx = tape.accum(input);
    for (std::size_t o = 0; o < g.size(); ++o) gx[(*arg)[o]] += g[o];
  });
}

/// Reinterprets the payload as a vector (or any shape of equal size).
inline Var reshape(Var input, Shape shape) {
  Tape& tape = *input.tape;
  Tensor out = input.value().reshaped(std::move(shape));
  return tape.record(std::move(out), {input}, [&tape, input](std::span<const double> g) {
    double* gx = tape.accum(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

inline Var flatten(Var input) { return reshape(input, {input.value().size()}); }

/// y = W x + b with x (N), W (M,N), b (M).
inline Var linear(Var input, Var weights, Var bias) {
  Tape& tape = *input.tape;
  const Tensor& x = input.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  detail::require_rank(x, 1, "linear input");
  detail::require_rank(w, 2, "linear weights");
  const std::size_t M = w.dim(0), N = w.dim(1);
  if (x.dim(0) != N)
    throw DimensionError("linear: input width " + std::to_string(x.dim(0)) + " != weight columns " +
                             std::to_string(N),
                         "width");
  if (b.rank() != 1 || b.dim(0) != M) throw DimensionError("linear: bias length must equal rows", "bias");
  Tensor out({M});
  Eigen::Map<Eigen::VectorXd> om(out.data().data(), static_cast<Eigen::Index>(M));
  detail::CMapMat wm(w.data().data(), M, N);
  Eigen::Map<const Eigen::VectorXd> xm(x.data().data(), static_cast<Eigen::Index>(N));
  Eigen::Map<const Eigen::VectorXd> bm(b.data().data(), static_cast<Eigen::Index>(M));
  om.noalias() = wm * xm + bm;
  return tape.record(std::move(out), {input, weights, bias},
                     [&tape, input, weights, bias, M, N](std::span<const double> g) {
                       Eigen::Map<const Eigen::VectorXd> gm(g.data(), static_cast<Eigen::Index>(M));
                       if (double* gw = tape.accum(weights)) {
                         Eigen::Map<const Eigen::VectorXd> xm(input.value().data().data(),
                                                              static_cast<Eigen::Index>(N));
                         detail::MapMat(gw, M, N).noalias() += gm * xm.transpose();
                       }
                       if (double* gb = tape.accum(bias))
                         for (std::size_t i = 0; i < M; ++i) gb[i] += g[i];
                       if (double* gx = tape.accum(input)) {
                         Eigen::Map<Eigen::VectorXd> gxm(gx, static_cast<Eigen::Index>(N));
                         gxm.noalias() += detail::CMapMat(weights.value().data().data(), M, N).transpose() * gm;
                       }
                     });
}

/// max(0, x); the subgradient at exactly 0 is 0.
inline Var relu(Var input) {
  Tape& tape = *input.tape;
  Tensor out = input.value();
  detail::note_mask(tape, out.data());
  for (double& v : out.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return tape.record(std::move(out), {input}, [&tape, input](std::span<const double> g) {
    double* gx = tape.accum(input);
    const Tensor& x = input.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) gx[i] += g[i];
  });
}

inline Var softmax(Var input) {
  Tape& tape = *input.tape;
  const Tensor& x = input.value();
  detail::require_rank(x, 1, "softmax input");
  Tensor out({x.size()});
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (out[i] = std::exp(x[i] - mx));
  for (double& v : out.data()) v /= z;
  const std::size_t self = tape.size();
  return tape.record(std::move(out), {input}, [&tape, input, self](std::span<const double> g) {
    double* gx = tape.accum(input);
    const Tensor& p = tape.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * p[i];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += p[i] * (g[i] - dot);
  });
}

/// -log(probs[target]) for an already-normalized distribution.
inline Var nll_loss(Var probs, std::size_t target) {
  Tape& tape = *probs.tape;
  const Tensor& p = probs.value();
  detail::require_rank(p, 1, "nll_loss probs");
  if (target >= p.size()) throw DimensionError("nll_loss: target out of range", "class");
  Tensor out({1}, -std::log(p[target]));
  return tape.record(std::move(out), {probs}, [&tape, probs, target](std::span<const double> g) {
    double* gp = tape.accum(probs);
    gp[target] -= g[0] / probs.value()[target];
  });
}

/// Fused softmax + NLL on raw scores: -log softmax(logits)[target].
/// The backward rule is (p - onehot(target)).
inline Var softmax_nll(Var logits, std::size_t target) {
  Tape& tape = *logits.tape;
  const Tensor& x = logits.value();
  detail::require_rank(x, 1, "softmax_nll logits");
  if (target >= x.size()) throw DimensionError("softmax_nll: target out of range", "class");
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  double z = 0.0;
  for (double v : x.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Tensor out({1}, lse - x[target]);
  return tape.record(std::move(out), {logits}, [&tape, logits, target, lse](std::span<const double> g) {
    double* gx = tape.accum(logits);
    const Tensor& x = logits.value();
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0] * std::exp(x[i] - lse);
    gx[target] -= g[0];
  });
}

/// Lays parts out in argument order along `axis`.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of nothing", "parts");
  Tape& tape = *parts.front().tape;
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw DimensionError("concat axis out of range", "axis " + std::to_string(axis));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat rank mismatch", "rank");
    for (std::size_t a = 0; a < s.size(); ++a)
      if (a != axis && s[a] != s0[a])
        throw DimensionError("concat: extent mismatch " + shape_str(s) + " vs " + shape_str(s0),
                             "axis " + std::to_string(a));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s0[a];
  for (std::size_t a = axis + 1; a < s0.size(); ++a) inner *= s0[a];
  const std::size_t out_axis = out_shape[axis];
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& v = p.value();
    const std::size_t len = v.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data().data() + o * len * inner, len * inner,
                  out.data().data() + (o * out_axis + off) * inner);
    off += len;
  }
  return tape.record(std::move(out), parts,
                     [&tape, parts, offsets, outer, inner, out_axis, axis](std::span<const double> g) {
                       for (std::size_t i = 0; i < parts.size(); ++i) {
                         double* gp = tape.accum(parts[i]);
                         if (!gp) continue;
                         const std::size_t len = parts[i].value().dim(axis);
                         for (std::size_t o = 0; o < outer; ++o) {
                           const double* src = g.data() + (o * out_axis + offsets[i]) * inner;
                           double* dst = gp + o * len * inner;
                           for (std::size_t j = 0; j < len * inner; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

/// Contiguous range [offset, offset+length) along `axis`; inverse of concat.
inline Var slice(Var input, std::size_t axis, std::size_t offset, std::size_t length) {
  Tape& tape = *input.tape;
  const Tensor& x = input.value();
  if (axis >= x.rank()) throw DimensionError("slice axis out of range", "axis " + std::to_string(axis));
  if (offset + length > x.dim(axis) || length == 0)
    throw DimensionError("slice range out of bounds", "axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const std::size_t in_axis = x.dim(axis);
  Shape s = x.shape();
  s[axis] = length;
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * in_axis + offset) * inner, length * inner,
                out.data().data() + o * length * inner);
  return tape.record(std::move(out), {input},
                     [&tape, input, outer, inner, in_axis, offset, length](std::span<const double> g) {
                       double* gx = tape.accum(input);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t j = 0; j < length * inner; ++j)
                           gx[(o * in_axis + offset) * inner + j] += g[o * length * inner + j];
                     });
}

inline Var add(Var a, Var b) {
  Tape& tape = *a.tape;
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch", "shape");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return tape.record(std::move(out), {a, b}, [&tape, a, b](std::span<const double> g) {
    for (Var v : {a, b})
      if (double* gv = tape.accum(v))
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
  });
}

/// Sum of all elements as a 1-element tensor.
inline Var sum(Var input) {
  Tape& tape = *input.tape;
  double s = 0.0;
  for (double v : input.value().data()) s += v;
  return tape.record(Tensor({1}, s), {input}, [&tape, input](std::span<const double> g) {
    double* gx = tape.accum(input);
    for (std::size_t i = 0; i < input.value().size(); ++i) gx[i] += g[0];
  });
}

/// Parameters of one LSTM layer. Gate rows are stacked (input, forget, cell, output).
struct LstmParams {
  Tensor w_x;   // (4H, N)
  Tensor w_h;   // (4H, H)
  Tensor bias;  // (4H)

  std::size_t hidden() const { return bias.dim(0) / 4; }
  std::size_t input_width() const { return w_x.dim(1); }
};

struct LstmState {
  Var h;
  Var c;
};

inline LstmState zero_lstm_state(Tape& tape, std::size_t hidden) {
  return {tape.constant(Tensor({hidden})), tape.constant(Tensor({hidden}))};
}

/// One LSTM time step:
///   i,f,o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
/// Chaining steps on one tape gives exact backpropagation through time.
inline LstmState lstm_step(Var x, LstmState state, Var w_x, Var w_h, Var bias) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  const Tensor& hv = state.h.value();
  const Tensor& cv = state.c.value();
  const Tensor& wx = w_x.value();
  const Tensor& wh = w_h.value();
  const Tensor& bv = bias.value();
  detail::require_rank(xv, 1, "lstm_step input");
  const std::size_t H = bv.dim(0) / 4, N = xv.dim(0);
  if (bv.dim(0) != 4 * H || wx.rank() != 2 || wx.dim(0) != 4 * H || wh.rank() != 2 || wh.dim(0) != 4 * H ||
      wh.dim(1) != H)
    throw DimensionError("lstm_step: gate parameter extents inconsistent", "gate");
  if (wx.dim(1) != N)
    throw DimensionError("lstm_step: input width " + std::to_string(N) + " != " + std::to_string(wx.dim(1)),
                         "width");
  if (hv.size() != H || cv.size() != H) throw DimensionError("lstm_step: state width mismatch", "hidden");

  using Vec = Eigen::VectorXd;
  const auto eH = static_cast<Eigen::Index>(H), eN = static_cast<Eigen::Index>(N);
  Vec pre = detail::CMapMat(wx.data().data(), 4 * H, N) * Eigen::Map<const Vec>(xv.data().data(), eN) +
            detail::CMapMat(wh.data().data(), 4 * H, H) * Eigen::Map<const Vec>(hv.data().data(), eH) +
            Eigen::Map<const Vec>(bv.data().data(), 4 * eH);
  // gates: [i | f | g | o] activated, followed by c' and tanh(c')
  auto gates = std::make_shared<std::vector<double>>(4 * H);
  Tensor hc({2 * H});
  for (std::size_t j = 0; j < H; ++j) {
    const double i = detail::sigmoid(pre[j]);
    const double f = detail::sigmoid(pre[H + j]);
    const double gg = std::tanh(pre[2 * H + j]);
    const double o = detail::sigmoid(pre[3 * H + j]);
    (*gates)[j] = i;
    (*gates)[H + j] = f;
    (*gates)[2 * H + j] = gg;
    (*gates)[3 * H + j] = o;
    const double c2 = f * cv[j] + i * gg;
    hc[H + j] = c2;
    hc[j] = o * std::tanh(c2);
  }
  const std::size_t self = tape.size();
  Var packed = tape.record(
      std::move(hc), {x, state.h, state.c, w_x, w_h, bias},
      [&tape, x, state, w_x, w_h, bias, gates, H, N, self](std::span<const double> g) {
        const Tensor& out = tape.value(self);
        const Tensor& cv = state.c.value();
        Vec dpre(4 * static_cast<Eigen::Index>(H));
        double* gc = tape.accum(state.c);
        for (std::size_t j = 0; j < H; ++j) {
          const double i = (*gates)[j], f = (*gates)[H + j], gg = (*gates)[2 * H + j], o = (*gates)[3 * H + j];
          const double tc = std::tanh(out[H + j]);
          const double dh = g[j];
          const double dc = g[H + j] + dh * o * (1.0 - tc * tc);
          dpre[static_cast<Eigen::Index>(j)] = dc * gg * i * (1.0 - i);
          dpre[static_cast<Eigen::Index>(H + j)] = dc * cv[j] * f * (1.0 - f);
          dpre[static_cast<Eigen::Index>(2 * H + j)] = dc * i * (1.0 - gg * gg);
          dpre[static_cast<Eigen::Index>(3 * H + j)] = dh * tc * o * (1.0 - o);
          if (gc) gc[j] += dc * f;
        }
        const auto eH = static_cast<Eigen::Index>(H), eN = static_cast<Eigen::Index>(N);
        if (double* gwx = tape.accum(w_x))
          detail::MapMat(gwx, 4 * H, N).noalias() +=
              dpre * Eigen::Map<const Vec>(x.value().data().data(), eN).transpose();
        if (double* gwh = tape.accum(w_h))
          detail::MapMat(gwh, 4 * H, H).noalias() +=
              dpre * Eigen::Map<const Vec>(state.h.value().data().data(), eH).transpose();
        if (double* gb = tape.accum(bias)) Eigen::Map<Vec>(gb, 4 * eH) += dpre;
        if (double* gx = tape.accum(x))
          Eigen::Map<Vec>(gx, eN).noalias() +=
              detail::CMapMat(w_x.value().data().data(), 4 * H, N).transpose() * dpre;
        if (double* gh = tape.accum(state.h))
          Eigen::Map<Vec>(gh, eH).noalias() +=
              detail::CMapMat(w_h.value().data().data(), 4 * H, H).transpose() * dpre;
      });
  return {slice(packed, 0, 0, H), slice(packed, 0, H, H)};
}

namespace debug {

/// ReLU whose backward rule is deliberately wrong (scales the gradient by 0.5).
/// Only for exercising the gradient checker's failure path.
inline Var faulty_relu(Var input) {
  Tape& tape = *input.tape;
  Tensor out = input.value();
  detail::note_mask(tape, out.data());
  for (double& v : out.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return tape.record(std::move(out), {input}, [&tape, input](std::span<const double> g) {
    double* gx = tape.accum(input);
    const Tensor& x = input.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) gx[i] += 0.5 * g[i];
  });
}

}  // namespace debug

}  // namespace sorec
