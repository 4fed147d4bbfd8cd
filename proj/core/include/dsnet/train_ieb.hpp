// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsnet/optim.hpp"
#include "dsnet/supernet.hpp"

namespace dsnet {

/// Source of the soft targets used by the non-widest sandwich paths.
enum class Ablation {
  /// In-place distillation: every slimmer path learns from the online widest.
  Plain,
  /// EMA widest path is the target of every slimmer path.
  Ema,
  /// EMA widest for random paths; the slimmest path learns the ensemble of
  /// EMA widest and EMA random paths.
  Ieb,
};

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);

/// Shadow copy of the supernet updated only by exponential averaging.
class EmaState {
 public:
  explicit EmaState(const Supernet& online);

  /// theta' <- alpha * theta' + (1 - alpha) * theta for every parameter.
  /// The recursion runs on double-precision accumulators; the shadow network
  /// holds their float rounding. Throws ContractError if the online parameter
  /// set no longer mirrors the shadow.
  void update(Supernet& online, double alpha);

  Supernet& shadow() { return shadow_; }
  /// Reloads the accumulators after the shadow parameters were overwritten.
  void resync();
  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t s) { steps_ = s; }

 private:
  Supernet shadow_;
  std::vector<std::vector<double>> acc_;
  std::size_t steps_ = 0;
};

struct IebConfig {
  std::size_t random_paths = 2;
  double alpha = 0.999;
  double alpha_start = 0.99;
  /// Fraction of all steps over which alpha ramps linearly from alpha_start.
  double ramp_fraction = 0.05;
  Ablation ablation = Ablation::Ieb;

  void validate() const;
};

/// EMA momentum at `step` of `total_steps`.
double ema_alpha(const IebConfig& config, std::size_t step, std::size_t total_steps);

/// Mean of the widest soft label and the random-path soft labels, row-wise.
Tensor ensemble_target(const Tensor& widest, const std::vector<Tensor>& randoms);

struct IebReport {
  double widest = 0.0;    ///< CE(widest online, ground truth)
  double random = 0.0;    ///< sum over random paths of soft CE
  double slimmest = 0.0;  ///< soft CE of the slimmest path
  double total = 0.0;
  std::vector<PathDescriptor> paths;  ///< widest, slimmest, then random paths
  std::size_t online_forwards = 0;
  std::size_t target_forwards = 0;
};

/// One Stage I step: sandwich sampling, the three losses, an optimizer step,
/// then the EMA update. `ema` may be null only for the Plain ablation.
IebReport ieb_step(Supernet& net, EmaState* ema, const Tensor& x, std::span<const int> labels, Rng& rng,
                   const IebConfig& config, Sgd& optimizer, double lr, double alpha);

}  // namespace dsnet
