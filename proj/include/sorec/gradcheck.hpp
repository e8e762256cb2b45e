// Central finite-difference verification of reverse-mode gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sorec/autodiff.hpp"

namespace sorec {

struct GradCheckOptions {
  double step = 1e-4;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double denominator_floor = 1e-6;
  /// 0: every coordinate individually. Otherwise each tensor is probed along
  /// this many random directions, which covers all coordinates at once.
  std::size_t directions_per_tensor = 0;
  std::uint64_t seed = 1;
  /// A probe whose +/- evaluations switch a ReLU or pooling branch measures the
  /// kink, not the derivative; it is retried with the step divided by 10, up
  /// to this many times, then falls back to a one-sided difference.
  std::size_t kink_retries = 3;
};

struct GradCheckEntry {
  std::string name;
  std::size_t probes = 0;
  std::size_t kink_retries = 0;  // step reductions taken
  std::size_t kinked = 0;        // probes that crossed a branch on both sides
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

using NamedParam = std::pair<std::string, Tensor*>;
/// Builds a scalar loss on the given tape from the current parameter values.
using LossClosure = std::function<Var(Tape&)>;

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline GradCheckReport grad_check(const LossClosure& loss_fn, const std::vector<NamedParam>& params, double tolerance,
                                  const GradCheckOptions& opt = {}) {
  GradSink sink;
  std::uint64_t base_branch = 0;
  double base_loss = 0.0;
  {
    Tape tape;
    Var loss = loss_fn(tape);
    base_branch = tape.branch_signature();
    base_loss = loss.value()[0];
    tape.backward(loss, &sink);
  }
  struct Eval {
    double loss;
    bool same_branch;
  };
  auto eval = [&]() -> Eval {
    Tape tape;
    const double v = loss_fn(tape).value()[0];
    return {v, tape.branch_signature() == base_branch};
  };
  // central difference of f(h) around the current values, shrinking h on kinks
  auto central = [&](GradCheckEntry& e, const std::function<void(double)>& set) {
    double h = opt.step, num = 0.0;
    for (std::size_t attempt = 0;; ++attempt) {
      set(h);
      const Eval up = eval();
      set(-h);
      const Eval dn = eval();
      set(0.0);
      num = (up.loss - dn.loss) / (2.0 * h);
      if (up.same_branch && dn.same_branch) break;
      if (attempt == opt.kink_retries) {
        // a kink closer than the smallest step: difference on the side that stays put
        if (up.same_branch) num = (up.loss - base_loss) / h;
        else if (dn.same_branch) num = (base_loss - dn.loss) / h;
        else ++e.kinked;
        break;
      }
      ++e.kink_retries;
      h /= 10.0;
    }
    return num;
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [name, p] : params) {
    GradCheckEntry e;
    e.name = name;
    const std::vector<double>* g = sink.find(p);
    std::vector<double> analytic = g ? *g : std::vector<double>(p->size(), 0.0);
    auto data = p->data();
    if (opt.directions_per_tensor == 0) {
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        const double num = central(e, [&](double h) { data[i] = orig + h; });
        e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], num, opt.denominator_floor));
        ++e.probes;
      }
    } else {
      const std::vector<double> orig(data.begin(), data.end());
      for (std::size_t d = 0; d < opt.directions_per_tensor; ++d) {
        std::vector<double> dir(data.size());
        double norm = 0.0;
        for (double& v : dir) norm += (v = normal(rng)) * v;
        norm = std::sqrt(norm);
        double proj = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i) proj += analytic[i] * (dir[i] /= norm);
        const double num = central(e, [&](double h) {
          for (std::size_t i = 0; i < data.size(); ++i) data[i] = orig[i] + h * dir[i];
        });
        e.max_rel_error = std::max(e.max_rel_error, relative_error(proj, num, opt.denominator_floor));
        ++e.probes;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace sorec
