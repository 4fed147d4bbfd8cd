// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsnet/optim.hpp"
#include "dsnet/supernet.hpp"

namespace dsnet {

enum class Difficulty {
  /// The slimmest path classifies the sample correctly.
  Easy,
  /// Even the widest path is wrong.
  Hard,
  /// Only the widest path is correct.
  Dependent,
};

enum class GateStrategy {
  /// Hard and Dependent samples both target the widest candidate.
  TryBest,
  /// Hard samples target the slimmest candidate, Dependent the widest.
  GiveUp,
};

GateStrategy parse_strategy(const std::string& name);
std::string strategy_name(GateStrategy s);
std::string difficulty_name(Difficulty d);

/// Slimmest-correct wins, so a sample both paths disagree on in the
/// "wrong" direction is still Easy.
Difficulty classify_difficulty(bool slimmest_correct, bool widest_correct);

/// Labels every sample of `x` from fixed-path predictions of the frozen
/// supernet at the slimmest and widest paths.
std::vector<Difficulty> label_difficulty(Supernet& net, const Tensor& x, std::span<const int> labels,
                                         NormRegime regime);

/// Candidate index the slimming head of every stage should pick.
std::size_t gate_target_index(Difficulty d, GateStrategy s, std::size_t candidates);
/// Same, restricted to the allowed index range [lo, hi].
std::size_t gate_target_index(Difficulty d, GateStrategy s, std::size_t lo, std::size_t hi);

/// Sum over stages of the cross-entropy between the softmaxed gate scores and
/// the one-hot target, averaged over the batch. `probs[i]` is [N, g_i] and
/// must hold normalized rows (ContractError otherwise). `bounds[i]`, when
/// given, is the allowed candidate range of stage i.
ad::Var sgs_loss(const std::vector<ad::Var>& probs, std::span<const Difficulty> labels, GateStrategy strategy,
                 std::span<const std::pair<std::size_t, std::size_t>> bounds = {});

/// Per-sample expected MAdds [N]: the sum over all paths of `table[path]`
/// weighted by the product of per-stage probabilities. Stage probabilities
/// are independent; `table` is indexed by path_index.
ad::Var expected_madds(const std::vector<ad::Var>& probs, const std::vector<double>& table);

/// Batch mean of (expected / total)^2. Throws ConfigError for total <= 0.
ad::Var complexity_loss(ad::Var expected, double total);
double complexity_loss(double expected, double total);

struct SgsConfig {
  double lambda_cls = 1.0;
  double lambda_cplx = 0.5;
  double lambda_sgs = 1.0;
  GateStrategy strategy = GateStrategy::TryBest;
  float tau = 1.0f;
  /// Gumbel perturbation of the gate scores during training.
  bool gumbel_noise = true;

  void validate() const;
};

struct GateReport {
  double cls = 0.0;
  double cplx = 0.0;
  double sgs = 0.0;
  double total = 0.0;
  double mean_madds = 0.0;  ///< mean MAdds of the hard routing taken in the forward
  std::vector<std::vector<std::size_t>> choice;  ///< [stage][sample]
};

/// One Stage II step on the slimming heads only. The supernet must be in
/// GateTraining mode; `labels_difficulty` comes from label_difficulty.
GateReport joint_gate_step(Supernet& net, const Tensor& x, std::span<const int> labels,
                           std::span<const Difficulty> labels_difficulty, const SgsConfig& config, Sgd& optimizer,
                           double lr, Rng& rng, NormRegime regime);

/// Mean routed MAdds for a set of per-stage per-sample candidate choices.
double mean_routed_madds(const SupernetConfig& config, const std::vector<std::vector<std::size_t>>& choice);

}  // namespace dsnet
