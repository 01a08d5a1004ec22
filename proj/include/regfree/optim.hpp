#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "regfree/nn/tensor.hpp"

namespace regfreenet {

/// Linear warmup from 0 to base_lr, then cosine annealing back to 0 at total_steps.
struct WarmupCosine {
  double base_lr = 3e-4;
  int warmup_steps = 0;
  int total_steps = 1;

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (warmup_steps < 0 || warmup_steps >= total_steps) throw ConfigError("need 0 <= warmup_steps < total_steps");
  }

  double at(int step) const {
    if (step < 0 || step > total_steps) {
      throw BoundsError("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
    }
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / warmup_steps;
    const double progress = static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

/// Adam with decoupled weight decay: p <- p - lr * (wd * p + m_hat / (sqrt(v_hat) + eps)).
template <class T>
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-5;
  };

  AdamW() = default;
  AdamW(const nn::ParamList<T>& params, Hyper h) : params_(params), h_(h) {
    for (const auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  /// One update with learning rate `lr`; the step counter advances first.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m[i] = h_.beta1 * m[i] + (1.0 - h_.beta1) * g;
        v[i] = h_.beta2 * v[i] + (1.0 - h_.beta2) * g * g;
        double value = p.value[i];
        value *= 1.0 - lr * h_.weight_decay;
        value -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + h_.eps);
        p.value[i] = static_cast<T>(value);
      }
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const Hyper& hyper() const { return h_; }

 private:
  nn::ParamList<T> params_;
  Hyper h_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace regfreenet
