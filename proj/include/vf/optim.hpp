#pragma once

#include <cmath>
#include <iostream>
#include <unordered_map>
#include <vector>

#include "vf/nn.hpp"
#include "vf/ops.hpp"

namespace vf {

// Adam with the usual defaults; no weight decay, no clipping.
template <typename T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
  void step(ParamRegistry<T>& params, double lr) {
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& e : params.entries) {
      if (!e.trainable) continue;
      auto g = e.tensor->grad();
      for (T gv : g)
        if (!std::isfinite(gv))
          throw Error("NaN/Inf gradient in parameter '" + e.name + "'; step aborted");
      State& st = state(e);
      auto theta = e.tensor->raw();
      for (int64_t i = 0; i < e.tensor->numel(); ++i) {
        double gd = static_cast<double>(g[i]);
        st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * gd;
        st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * gd * gd;
        double m_hat = st.m[i] / bc1;
        double v_hat = st.v[i] / bc2;
        theta[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + eps_));
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  struct State {
    std::vector<double> m, v;
  };

  State& state(const typename ParamRegistry<T>::Entry& e) {
    auto it = states_.find(e.tensor->storage().get());
    if (it == states_.end()) {
      State st;
      st.m.assign(e.tensor->numel(), 0.0);
      st.v.assign(e.tensor->numel(), 0.0);
      it = states_.emplace(e.tensor->storage().get(), std::move(st)).first;
    }
    return it->second;
  }

  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<const void*, State> states_;
};

// Half-cosine decay from eta_max to eta_min over t_max episodes.
struct CosineSchedule {
  double eta_max = 0.0;
  double eta_min = 0.0;
  int64_t t_max = 1;

  void validate() const {
    if (t_max < 1) throw ConfigError("cosine schedule needs t_max >= 1");
    if (eta_min > eta_max) throw ConfigError("cosine schedule needs eta_min <= eta_max");
  }
};

inline double cosine_lr(const CosineSchedule& s, int64_t t) {
  s.validate();
  if (t < 0) throw ContractError("cosine_lr: negative episode index");
  if (t > s.t_max) {
    std::cerr << "vf: warning: episode " << t << " past schedule end " << s.t_max
              << "; learning rate clamped to eta_min\n";
    return s.eta_min;
  }
  double phase = static_cast<double>(t) / static_cast<double>(s.t_max);
  return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(M_PI * phase));
}

// Non-autodiff BCE for metrics: mean of -[y ln p + (1-y) ln(1-p)] with the
// same 1e-7 clamp as the training loss.
inline double bce_metric(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty())
    throw ContractError("bce_metric: size mismatch or empty input");
  const double eps_c = 1e-7;
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ContractError("bce_metric: label not in {0,1}");
    double p = std::min(std::max(probs[i], eps_c), 1.0 - eps_c);
    acc += labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return acc / static_cast<double>(probs.size());
}

}  // namespace vf
