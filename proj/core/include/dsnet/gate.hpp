// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dsnet/autodiff.hpp"
#include "dsnet/random.hpp"

namespace dsnet {

enum class HeadDesign {
  /// argmax over g candidate scores; the chosen candidate is the ratio.
  OneHot,
  /// A single sigmoid output used as the ratio, snapped to the nearest candidate.
  Scalar,
};

/// Nearest candidate to `ratio`; exact ties snap to the smaller candidate.
double snap_to_candidate(double ratio, const std::vector<double>& candidates);

/// Hidden width of the gate's shared reduction layer for `channels_max` inputs.
std::size_t gate_hidden_dim(std::size_t channels_max);

/// Average-pool encoder feeding two heads through one shared reduction W1:
///
///   hidden    = relu(W1[:, :w] * avgpool(x))
///   scores    = W2 * hidden                              (slimming head)
///   attention = x * (1 + tanh(W3[:w, :] * hidden))        (attention head)
///
/// where w is the incoming channel width. W3 starts at zero, so the attention
/// head is the identity until it is trained.
class DoubleHeadedGate {
 public:
  struct Slimming {
    ad::Var scores;   ///< [N, g] raw scores (one-hot) or [N, 1] logits (scalar)
    ad::Var one_hot;  ///< [N, g] straight-through one-hot (one-hot design only)
    std::vector<std::size_t> choice;  ///< chosen candidate index per sample
  };

  DoubleHeadedGate() = default;
  DoubleHeadedGate(std::string name, std::size_t in_max, std::vector<double> candidates, HeadDesign design,
                   bool slimming_head, Rng& rng);

  static ad::Var encode(ad::Var x) { return ad::global_avg_pool(x); }
  ad::Var hidden(ad::Tape& tape, ad::Var encoded);
  ad::Var attend(ad::Tape& tape, ad::Var x, ad::Var hidden);

  /// Slimming head on the shared hidden features. With `noise` defined
  /// (training), the one-hot is argmax(scores + noise) with a softmax-relaxed
  /// backward at temperature `tau`.
  Slimming slim(ad::Tape& tape, ad::Var hidden, float tau = 1.0f, const Tensor& noise = {});

  /// Ratio chosen for each sample: the candidate indexed by the one-hot, or the
  /// snapped sigmoid output for the scalar design.
  std::vector<double> ratios(const Slimming& s) const;

  /// Restricts the one-hot head to the candidates flagged true. Disallowed
  /// scores get a large negative bias, so they are never chosen and carry
  /// (numerically) zero probability. An empty mask allows everything.
  void set_allowed(std::vector<bool> allowed);
  const std::vector<bool>& allowed() const { return allowed_; }
  /// Lowest and highest allowed candidate index.
  std::pair<std::size_t, std::size_t> allowed_bounds() const;

  std::size_t in_max() const { return w1.value.dim(1); }
  std::size_t hidden_dim() const { return w1.value.dim(0); }
  const std::vector<double>& candidates() const { return candidates_; }
  HeadDesign design() const { return design_; }
  bool has_slimming_head() const { return slimming_head_; }

  /// Multiply-adds of one gate evaluation at incoming width `in_width`.
  std::size_t madds(std::size_t in_width) const;
  void collect(std::vector<ad::Parameter*>& out);

  ad::Parameter w1;  ///< [d, C_max] shared reduction
  ad::Parameter w2;  ///< [g, d] slimming head ([1, d] for the scalar design)
  ad::Parameter w3;  ///< [C_max, d] attention head

 private:
  std::vector<double> candidates_;
  HeadDesign design_ = HeadDesign::OneHot;
  bool slimming_head_ = false;
  std::vector<bool> allowed_;
};

}  // namespace dsnet
