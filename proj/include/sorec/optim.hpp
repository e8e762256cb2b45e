// Heavy-ball SGD and seeded parameter initialization.
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "sorec/tensor.hpp"

namespace sorec {

struct OptimState {
  std::vector<std::vector<double>> velocity;  // one buffer per parameter, zero-initialized
  double momentum = 0.9;
  double learning_rate = 5e-3;
};

inline OptimState make_optim_state(std::span<Tensor* const> params, double learning_rate, double momentum = 0.9) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0,1)");
  OptimState st;
  st.momentum = momentum;
  st.learning_rate = learning_rate;
  st.velocity.reserve(params.size());
  for (const Tensor* p : params) st.velocity.emplace_back(p->size(), 0.0);
  return st;
}

/// v <- mu*v + g ; p <- p - lr*v for every parameter.
inline void sgd_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads, OptimState& st) {
  if (params.size() != grads.size() || params.size() != st.velocity.size())
    throw DimensionError("sgd_step: parameter, gradient and velocity counts differ", "parameter");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    const auto& g = grads[k];
    auto& v = st.velocity[k];
    if (g.size() != p.size() || v.size() != p.size())
      throw DimensionError("sgd_step: gradient extent mismatch for parameter " + std::to_string(k), "parameter");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = st.momentum * v[i] + g[i];
      p[i] -= st.learning_rate * v[i];
    }
  }
}

/// Uses each parameter's own grad buffer (absent buffer counts as zero).
inline void sgd_step(std::span<Tensor* const> params, OptimState& st) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    if (p->has_grad()) grads.emplace_back(p->grad().begin(), p->grad().end());
    else grads.emplace_back(p->size(), 0.0);
  }
  sgd_step(params, grads, st);
}

/// Zero-mean normal with std sqrt(2 / fan_in).
inline void kaiming_init(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& v : t.data()) v = dist(rng);
}

}  // namespace sorec
