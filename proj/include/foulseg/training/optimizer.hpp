#pragma once

#include <cmath>
#include <vector>

#include "foulseg/segnet/tensor.hpp"

namespace foulseg {

/// Adam with bias correction; defaults follow the common Keras settings.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update of every trainable, non-buffer parameter. Moments of frozen parameters are left untouched.
  void step(const std::vector<nn::Parameter<T>*>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    for (auto* p : params) {
      if (p->buffer || !p->trainable) continue;
      if (p->m.size() != p->size()) {
        p->m.assign(p->size(), T(0));
        p->v.assign(p->size(), T(0));
      }
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double g = p->grad[i];
        const double m = config_.beta1 * p->m[i] + (1 - config_.beta1) * g;
        const double v = config_.beta2 * p->v[i] + (1 - config_.beta2) * g * g;
        p->m[i] = static_cast<T>(m);
        p->v[i] = static_cast<T>(v);
        p->value[i] -= static_cast<T>(lr * (m / c1) / (std::sqrt(v / c2) + config_.epsilon));
      }
    }
  }

  /// Forgets the step count; callers clear parameter moments separately.
  void reset() { t_ = 0; }
  int steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  int t_ = 0;
};

template <typename T>
void clear_moments(const std::vector<nn::Parameter<T>*>& params) {
  for (auto* p : params) {
    p->m.clear();
    p->v.clear();
  }
}

}  // namespace foulseg
