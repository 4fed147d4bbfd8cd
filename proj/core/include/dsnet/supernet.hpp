// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsnet/gate.hpp"
#include "dsnet/slimmable.hpp"

namespace dsnet {

enum class Architecture {
  /// Residual stages, every stage gated, group norm.
  Residual,
  /// Plain conv stack with one gated tail stage, batch norm with per-path recalibration.
  Plain,
};

struct StageSpec {
  std::size_t blocks = 1;
  /// Channel count at ratio 1.
  std::size_t channels = 16;
  std::size_t stride = 1;
  /// Candidate slimming ratios; empty for a fixed-width (ungated) stage.
  std::vector<double> candidates;

  bool gated() const { return !candidates.empty(); }
};

struct SupernetConfig {
  Architecture arch = Architecture::Residual;
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 10;
  std::size_t stem_channels = 16;
  std::size_t stem_stride = 1;
  /// Odd kernels are same-padded; even kernels are unpadded (patchify stem).
  std::size_t stem_kernel = 3;
  std::vector<StageSpec> stages;
  std::size_t interval = 4;
  std::size_t max_group_size = 8;
  NormKind norm = NormKind::GroupNorm;
  HeadDesign head_design = HeadDesign::OneHot;

  /// Throws ConfigError on any structural inconsistency.
  void validate() const;
  ConvGeometry stem_geometry() const { return {stem_stride, stem_kernel % 2 ? stem_kernel / 2 : 0}; }
  std::vector<std::size_t> gated_stages() const;
  /// Product over gated stages of the candidate-list length.
  std::size_t routing_space() const;
  WidthRule rule(std::size_t stage) const;

  /// Four gated residual stages, ratios {0.25, 0.5, 0.75, 1}, group norm.
  static SupernetConfig residual_analog();
  /// Fixed-width head, single gated tail with ratios 0.5..1.25, batch norm.
  static SupernetConfig plain_analog();
};

/// One candidate ratio per gated stage.
struct PathDescriptor {
  std::vector<double> ratios;

  bool operator==(const PathDescriptor&) const = default;
  std::string str() const;
};

PathDescriptor widest_path(const SupernetConfig& config);
PathDescriptor slimmest_path(const SupernetConfig& config);
/// Mixed-radix index, first gated stage most significant.
std::size_t path_index(const SupernetConfig& config, const PathDescriptor& path);
PathDescriptor path_at(const SupernetConfig& config, std::size_t index);
std::vector<PathDescriptor> all_paths(const SupernetConfig& config);

/// Sandwich rule: [widest, slimmest] followed by `n` paths whose stage ratios
/// are drawn uniformly from each stage's candidate list.
std::vector<PathDescriptor> sample_sandwich(const SupernetConfig& config, Rng& rng, std::size_t n);

/// Multiply-adds of one sample's forward along `path`: convolutions, the
/// classifier and every gate evaluated on the way.
std::size_t count_madds(const SupernetConfig& config, const PathDescriptor& path);
/// count_madds for every path, indexed by path_index.
std::vector<double> madds_table(const SupernetConfig& config);

enum class TrainingStage {
  /// Supernet and attention heads train; slimming heads are unused.
  SupernetTraining,
  /// Only the slimming heads (W2) train; everything else is frozen.
  GateTraining,
};

/// Width-routable network assembled from sliceable layers and gates.
class Supernet {
 public:
  struct GateOutputs {
    std::vector<ad::Var> scores;   ///< per gated stage, [N, g]
    std::vector<ad::Var> one_hot;  ///< per gated stage, [N, g]
    std::vector<std::vector<std::size_t>> choice;  ///< [gated stage][sample]
  };

  struct Routed {
    Tensor logits;
    std::vector<std::vector<std::size_t>> choice;  ///< [gated stage][sample]
  };

  Supernet(SupernetConfig config, std::uint64_t seed);
  Supernet(Supernet&&) = default;
  Supernet& operator=(Supernet&&) = default;

  /// Independent deep copy (parameters and recorded statistics).
  Supernet clone() const;

  const SupernetConfig& config() const { return config_; }

  /// Every parameter in a stable order with unique names.
  std::vector<ad::Parameter*> parameters();
  std::vector<ad::Parameter*> slimming_parameters();
  std::vector<SwitchableNorm*> norms();
  std::vector<DoubleHeadedGate*> gates();
  /// Gate of gated stage `i` (the one carrying the slimming head).
  DoubleHeadedGate& slimming_gate(std::size_t i);

  void set_training_stage(TrainingStage stage);

  /// Limits every slimming head to the candidates whose ratio is listed.
  /// Empty restores the full routing space. Throws ConfigError if a gated
  /// stage would be left without a candidate.
  void restrict_candidates(const std::vector<double>& ratios);

  /// Deterministic forward with every gated stage at the given ratio. Gates
  /// only apply their attention heads.
  ad::Var forward_at_path(ad::Tape& tape, ad::Var x, const PathDescriptor& path, NormRegime regime);

  /// Batched gate-training forward. Each gated stage draws a straight-through
  /// one-hot per sample and the stage runs at maximal width with the
  /// per-sample prefix mask implied by the choice, which reproduces the sliced
  /// computation exactly. `noise[i]` (optional) perturbs gated stage i.
  ad::Var forward_gated(ad::Tape& tape, ad::Var x, NormRegime regime, const std::vector<Tensor>* noise, float tau,
                        GateOutputs* out);

  /// Dynamic inference: every sample is routed by its own gate decisions and
  /// executed on contiguous weight slices. `forced` overrides the decision of
  /// each gated stage (candidate index), for testing.
  Routed forward_routed(const Tensor& x, NormRegime regime, const std::vector<std::size_t>* forced = nullptr,
                        std::size_t threads = 1);

  /// Runs `batches` at `path` in recalibration mode and stores the resulting
  /// batch-norm statistics for that path's widths. No-op for group norm;
  /// returns false in that case.
  template <typename BatchSource>
  bool recalibrate(const PathDescriptor& path, BatchSource&& next_batch);

 private:
  Supernet(const Supernet&) = default;

  struct Block {
    std::optional<DoubleHeadedGate> gate;
    SliceableConv2d conv1;
    SwitchableNorm norm1;
    std::optional<SliceableConv2d> conv2;
    std::optional<SwitchableNorm> norm2;
    std::optional<SliceableConv2d> proj;
    std::optional<SwitchableNorm> proj_norm;
  };

  struct Stage {
    WidthRule rule;
    std::vector<Block> blocks;
    std::optional<std::size_t> gated_index;
  };

  enum class RouteMode { Fixed, Masked, Routed };

  struct Route {
    RouteMode mode = RouteMode::Fixed;
    const PathDescriptor* path = nullptr;
    const std::vector<std::size_t>* forced = nullptr;
    const std::vector<Tensor>* noise = nullptr;
    float tau = 1.0f;
    GateOutputs* out = nullptr;
  };

  ad::Var run(ad::Tape& tape, ad::Var x, NormRegime regime, Route& route);
  ad::Var run_block(ad::Tape& tape, Block& block, ad::Var h, std::size_t width, ad::Var mask,
                    const std::vector<std::size_t>* sample_widths, NormRegime regime);
  void begin_recalibration(const PathDescriptor& path);
  void commit_recalibration();

  SupernetConfig config_;
  SliceableConv2d stem_;
  SwitchableNorm stem_norm_;
  std::vector<Stage> stages_;
  SliceableLinear fc_;
  TrainingStage training_stage_ = TrainingStage::SupernetTraining;
};

template <typename BatchSource>
bool Supernet::recalibrate(const PathDescriptor& path, BatchSource&& next_batch) {
  if (config_.norm != NormKind::BatchNorm) return false;
  begin_recalibration(path);
  Tensor batch;
  while (next_batch(batch)) {
    ad::Tape tape(false);
    forward_at_path(tape, tape.constant(batch), path, NormRegime::Recalibrate);
  }
  commit_recalibration();
  return true;
}

}  // namespace dsnet
