/* Copyright 2026 The crossreid Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <cmath>
#include <numbers>

#include "crossreid/model.hpp"

namespace crossreid {

struct AdamWConfig {
  double base_lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  // Defaults to base_lr / 100 when negative.
  double min_lr = -1.0;

  double resolved_min_lr() const { return min_lr < 0.0 ? base_lr / 100.0 : min_lr; }

  void validate() const {
    if (!(base_lr >= 0.0)) throw ConfigError("optim.lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("optim.beta1/beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("optim.eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
  }
};

struct OptimState {
  AdamWConfig config;
  std::array<RealMatrix, kNumTensors> m;  // first moments
  std::array<RealMatrix, kNumTensors> v;  // second moments
  std::uint64_t step = 0;

  bool operator==(const OptimState& o) const { return m == o.m && v == o.v && step == o.step; }
};

inline OptimState make_optim_state(const ModelParams& params, const AdamWConfig& config) {
  config.validate();
  OptimState s;
  s.config = config;
  auto t = params.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    s.m[i] = RealMatrix(t[i]->rows(), t[i]->cols());
    s.v[i] = RealMatrix(t[i]->rows(), t[i]->cols());
  }
  return s;
}

// Adam with decoupled weight decay:
//   w <- w - lr * wd * w
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   w <- w - lr * m_hat / (sqrt(v_hat) + eps)
// Non-finite gradients reject the step and leave params and state untouched.
inline void step(OptimState& state, ModelParams& params, const ParamGrads& grads, double lr) {
  if (!(lr >= 0.0)) throw ConfigError("optim step: lr must be >= 0");
  if (!grads.finite()) throw NumericError("optim step: non-finite gradient");
  auto t = params.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i)
    if (grads.tensors[i].rows() != t[i]->rows() || grads.tensors[i].cols() != t[i]->cols() ||
        state.m[i].size() != t[i]->size())
      throw DimensionError("optim step: shape mismatch on " + std::string(kTensorNames[i]));

  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    auto& w = t[i]->data();
    const auto& g = grads.tensors[i].data();
    auto& m = state.m[i].data();
    auto& v = state.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (c.weight_decay != 0.0) w[j] -= lr * c.weight_decay * w[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

// min_lr + (base_lr - min_lr) * (1 + cos(pi * epoch / total)) / 2
inline double cosine_lr(double epoch, double total_epochs, double base_lr, double min_lr) {
  if (!(total_epochs > 0.0)) {
    if (total_epochs == 0.0 && epoch == 0.0) return base_lr;
    throw ConfigError("cosine_lr: total_epochs must be > 0");
  }
  if (!(epoch >= 0.0 && epoch <= total_epochs))
    throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) +
                      "]");
  if (epoch == total_epochs) return min_lr;
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

}  // namespace crossreid
