#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "vf/ops.hpp"
#include "vf/random.hpp"
#include "vf/tape.hpp"
#include "vf/tensor.hpp"

namespace vf {

template <typename T>
struct GradCheckEntry {
  std::string name;
  T max_rel_err = 0;
  int64_t elements_checked = 0;
};

template <typename T>
struct GradCheckReport {
  std::vector<GradCheckEntry<T>> per_param;
  T max_rel_err = 0;
  T tol = 0;
  bool pass = false;
};

// Central-difference gradient check: the analytic gradients of `program`
// (a deterministic tensor program producing a scalar) are compared against
// (f(x+eps) - f(x-eps)) / (2 eps), parameter by parameter.
//
// Relative error is |a - n| / max(|a|, |n|); positions where both magnitudes
// fall below `atol` are treated as matching zeros (central differences are
// pure roundoff noise there). `samples_per_param` == 0 checks every element;
// a positive value checks that many seeded random positions per parameter,
// which keeps whole-model checks inside the runtime budget while still
// touching every parameter tensor.
template <typename T>
GradCheckReport<T> grad_check(const std::function<Tensor<T>()>& program,
                              const std::vector<std::pair<std::string, Tensor<T>*>>& params,
                              T eps, T tol, int64_t samples_per_param = 0,
                              T atol = T(1e-6), uint64_t seed = 0) {
  if (eps <= T(0)) throw ContractError("grad_check: eps must be positive");

  // A program whose value changes between identical evaluations cannot be
  // finite-differenced (undisabled dropout, unpinned seed, ...).
  T probe1 = program().item();
  T probe2 = program().item();
  if (probe1 != probe2)
    throw ContractError("grad_check: program is not deterministic (" + std::to_string(probe1) +
                        " vs " + std::to_string(probe2) + ")");

  for (auto& [name, t] : params) t->set_requires_grad(true);
  for (auto& [name, t] : params) t->zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> loss = program();
    tape.backward(loss);
  }

  GradCheckReport<T> report;
  report.tol = tol;
  Rng rng(seed ^ 0x6fd1e4c905bb3a21ull);
  for (auto& [name, t] : params) {
    GradCheckEntry<T> entry;
    entry.name = name;
    std::vector<T> analytic(t->grad().begin(), t->grad().end());
    std::vector<int64_t> positions;
    int64_t n = t->numel();
    if (samples_per_param <= 0 || samples_per_param >= n) {
      positions.resize(n);
      for (int64_t i = 0; i < n; ++i) positions[i] = i;
    } else {
      for (int64_t s = 0; s < samples_per_param; ++s) positions.push_back(rng.below(n));
      std::sort(positions.begin(), positions.end());
      positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    }
    auto vals = t->raw();
    for (int64_t i : positions) {
      T original = vals[i];
      vals[i] = original + eps;
      T plus = program().item();
      vals[i] = original - eps;
      T minus = program().item();
      vals[i] = original;
      T numeric = (plus - minus) / (T(2) * eps);
      T a = analytic[i];
      T denom = std::max(std::abs(a), std::abs(numeric));
      if (denom < atol) continue;
      T rel = std::abs(a - numeric) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.elements_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace vf
