// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/optim.hpp"

#include <cmath>
#include <numbers>

#include "dsnet/errors.hpp"

namespace dsnet {

double cosine_lr(double base, std::size_t step, std::size_t total, double floor_fraction) {
  if (total == 0) return base;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  const double floor = base * floor_fraction;
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

void Sgd::step(const std::vector<ad::Parameter*>& params, double lr) {
  if (!std::isfinite(lr) || lr < 0.0) throw ConfigError("learning rate must be finite and non-negative");
  for (ad::Parameter* p : params) {
    if (!p->trainable || !p->grad.defined()) continue;
    if (p->grad.shape() != p->value.shape()) throw ContractError(p->name + ": gradient shape drifted");
    Tensor& v = velocity_[p->name];
    if (!v.defined()) v = Tensor(p->value.shape());
    const float mu = static_cast<float>(momentum_);
    const float wd = p->decay ? static_cast<float>(weight_decay_) : 0.0f;
    const float rate = static_cast<float>(lr);
    float* w = p->value.data();
    const float* g = p->grad.data();
    float* vel = v.data();
    for (std::size_t i = 0, n = p->value.numel(); i < n; ++i) {
      vel[i] = mu * vel[i] + (g[i] + wd * w[i]);
      w[i] -= rate * vel[i];
    }
  }
}

void Sgd::zero_grad(const std::vector<ad::Parameter*>& params) {
  for (ad::Parameter* p : params) p->zero_grad();
}

}  // namespace dsnet
