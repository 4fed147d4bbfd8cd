// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsnet/autodiff.hpp"
#include "dsnet/random.hpp"

namespace dsnet {

/// Channel count for slimming ratio `ratio` of a layer whose ratio-1 width is
/// `base`: the multiple of `interval` nearest to ratio * base, never below one
/// interval. Halfway cases round up. Throws ConfigError if `interval` does not
/// divide `base` or the ratio is not positive.
std::size_t round_channels(double ratio, std::size_t base, std::size_t interval);

/// Candidate ratios of one layer together with the rounding rule that turns
/// them into channel counts.
struct WidthRule {
  std::vector<double> candidates;
  std::size_t base = 0;
  std::size_t interval = 1;

  /// Validates that candidates are strictly increasing and map to strictly
  /// increasing channel counts (injective per layer).
  void validate() const;
  /// Index of `ratio` in the candidate list, or ConfigError.
  std::size_t index_of(double ratio) const;
  std::size_t channels(double ratio) const;
  std::size_t channels_at(std::size_t index) const { return round_channels(candidates.at(index), base, interval); }
  std::size_t max_channels() const { return channels_at(candidates.size() - 1); }
  std::size_t min_channels() const { return channels_at(0); }
  std::vector<std::size_t> all_channels() const;
};

/// Per-stage slimming ratios in effect for one forward pass.
struct WidthContext {
  std::vector<double> ratios;
};

/// Convolution holding weights at maximal width and executing any contiguous
/// prefix block W[:out, :in].
class SliceableConv2d {
 public:
  SliceableConv2d() = default;
  SliceableConv2d(std::string name, std::size_t in_max, std::size_t out_max, std::size_t kernel, ConvGeometry geom,
                  bool with_bias, Rng& rng);

  ad::Var forward(ad::Tape& tape, ad::Var x, std::size_t active_out);
  /// Forward where the output width comes from `out_rule` at `ratio`.
  ad::Var forward_at_width(ad::Tape& tape, ad::Var x, const WidthRule& out_rule, double ratio);

  std::size_t in_max() const { return weight.value.dim(1); }
  std::size_t out_max() const { return weight.value.dim(0); }
  std::size_t kernel() const { return weight.value.dim(2); }
  ConvGeometry geometry() const { return geom_; }
  std::size_t out_extent(std::size_t in_extent) const { return conv_out_extent(in_extent, kernel(), geom_); }
  /// out * out_h * out_w * in * k^2.
  std::size_t madds(std::size_t in, std::size_t out, std::size_t in_h, std::size_t in_w) const;
  void collect(std::vector<ad::Parameter*>& out);

  ad::Parameter weight;
  std::optional<ad::Parameter> bias;

 private:
  ConvGeometry geom_{};
};

class SliceableLinear {
 public:
  SliceableLinear() = default;
  SliceableLinear(std::string name, std::size_t in_max, std::size_t out_max, bool with_bias, Rng& rng);

  ad::Var forward(ad::Tape& tape, ad::Var x, std::size_t active_out);
  std::size_t out_max() const { return weight.value.dim(0); }
  std::size_t in_max() const { return weight.value.dim(1); }
  std::size_t madds(std::size_t in, std::size_t out) const { return in * out; }
  void collect(std::vector<ad::Parameter*>& out);

  ad::Parameter weight;
  std::optional<ad::Parameter> bias;
};

enum class NormKind { GroupNorm, BatchNorm };

/// How a batch-norm layer obtains statistics for one forward pass.
enum class NormRegime {
  /// Statistics of the current batch.
  Batch,
  /// Recorded per-width statistics; unrecorded widths are an error.
  Recorded,
  /// Statistics of the current batch, also accumulated for recalibration.
  Recalibrate,
};

/// Normalization over a sliceable channel axis. Group norm uses a fixed number
/// of channels per group so that every narrower width is an exact prefix of the
/// wider computation. Batch norm keeps one statistics table per active width.
class SwitchableNorm {
 public:
  struct Stats {
    Tensor mean;
    Tensor var;
  };

  SwitchableNorm() = default;
  SwitchableNorm(std::string name, NormKind kind, std::size_t channels_max, std::size_t group_size,
                 float gamma_init = 1.0f);

  /// `sample_widths`, when given, selects per-sample statistics (batch norm in
  /// Recorded regime over masked full-width activations).
  ad::Var forward(ad::Tape& tape, ad::Var x, NormRegime regime,
                  const std::vector<std::size_t>* sample_widths = nullptr);

  NormKind kind() const { return kind_; }
  std::size_t group_size() const { return group_size_; }
  bool has_stats(std::size_t width) const { return table_.count(width) != 0; }
  const std::map<std::size_t, Stats>& stats() const { return table_; }
  std::map<std::size_t, Stats>& stats() { return table_; }

  /// Drops pending recalibration sums for `width`.
  void begin_recalibration(std::size_t width);
  /// Replaces the table entry of every width accumulated since the last begin
  /// with the cumulative mean of batch means and batch variances.
  void commit_recalibration();

  void collect(std::vector<ad::Parameter*>& out);

  ad::Parameter gamma;
  ad::Parameter beta;

 private:
  struct Accum {
    std::vector<double> mean;
    std::vector<double> var;
    std::size_t batches = 0;
  };

  NormKind kind_ = NormKind::GroupNorm;
  std::size_t group_size_ = 1;
  std::map<std::size_t, Stats> table_;
  std::map<std::size_t, Accum> pending_;
};

/// Largest divisor of gcd(widths) that does not exceed `max_group_size`.
std::size_t group_size_for(const std::vector<std::size_t>& widths, std::size_t max_group_size);

}  // namespace dsnet
