// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dsnet/autodiff.hpp"

namespace dsnet {

/// Learning rate at `step` of `total` under cosine decay from `base` to
/// `base * floor_fraction`.
double cosine_lr(double base, std::size_t step, std::size_t total, double floor_fraction = 0.01);

/// SGD with heavy-ball momentum and decoupled-free (L2) weight decay:
///
///   v <- momentum * v + (g + wd * w)
///   w <- w - lr * v
///
/// Parameters flagged non-trainable, or without a gradient, are skipped and
/// left byte-identical. Weight decay only touches parameters with decay set.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.9, double weight_decay = 1e-4) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<ad::Parameter*>& params, double lr);
  static void zero_grad(const std::vector<ad::Parameter*>& params);

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }
  /// Momentum buffers keyed by parameter name (for checkpointing).
  std::map<std::string, Tensor>& velocity() { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace dsnet
