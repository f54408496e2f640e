#pragma once

#include <cmath>
#include <cstddef>

#include "doa/errors.hpp"
#include "doa/nn/network.hpp"

namespace doa::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments. Only trainable blocks are updated; the
/// batch-norm running statistics are left alone.
class Adam {
 public:
  Adam(const ModelParams& params, AdamConfig cfg = {}) : cfg_(cfg), m_(zeros_like(params)), v_(zeros_like(params)) {}

  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  [[nodiscard]] double learning_rate() const { return cfg_.learning_rate; }
  [[nodiscard]] std::size_t steps() const { return step_; }

  /// Applies one update; `grads` is the (already batch-averaged) gradient.
  void step(ModelParams& params, const ModelParams& grads) {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      for (std::size_t b = 0; b < params.layers[l].size(); ++b) {
        auto& block = params.layers[l][b];
        if (!block.trainable()) continue;
        auto& w = block.tensor.values;
        const auto& g = grads.layers[l][b].tensor.values;
        auto& m = m_.layers[l][b].tensor.values;
        auto& v = v_.layers[l][b].tensor.values;
        for (std::size_t i = 0; i < w.size(); ++i) {
          if (!std::isfinite(g[i])) throw NumericalError("Adam: non-finite gradient");
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
        }
      }
    }
  }

 private:
  AdamConfig cfg_;
  ModelParams m_;
  ModelParams v_;
  std::size_t step_ = 0;
};

}  // namespace doa::nn
