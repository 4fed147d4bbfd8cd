// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/slimmable.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsnet/errors.hpp"

namespace dsnet {

std::size_t round_channels(double ratio, std::size_t base, std::size_t interval) {
  if (interval == 0 || base == 0 || base % interval != 0) {
    throw ConfigError("channel interval " + std::to_string(interval) + " does not divide " + std::to_string(base));
  }
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw ConfigError("slimming ratio must be positive");
  // Small bias absorbs representation error of decimal ratios such as 0.35.
  const double units = std::floor(ratio * static_cast<double>(base) / static_cast<double>(interval) + 0.5 + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(units)) * interval;
}

void WidthRule::validate() const {
  if (candidates.empty()) throw ConfigError("empty candidate ratio list");
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (!(candidates[i] > candidates[i - 1])) throw ConfigError("candidate ratios must be strictly increasing");
    if (channels_at(i) <= channels_at(i - 1)) {
      throw ConfigError("candidate ratios " + std::to_string(candidates[i - 1]) + " and " +
                        std::to_string(candidates[i]) + " round to the same channel count with interval " +
                        std::to_string(interval));
    }
  }
  channels_at(0);
}

std::size_t WidthRule::index_of(double ratio) const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (std::abs(candidates[i] - ratio) < 1e-9) return i;
  }
  throw ConfigError("ratio " + std::to_string(ratio) + " is not in the candidate list");
}

std::size_t WidthRule::channels(double ratio) const { return channels_at(index_of(ratio)); }

std::vector<std::size_t> WidthRule::all_channels() const {
  std::vector<std::size_t> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) out.push_back(channels_at(i));
  return out;
}

SliceableConv2d::SliceableConv2d(std::string name, std::size_t in_max, std::size_t out_max, std::size_t kernel,
                                 ConvGeometry geom, bool with_bias, Rng& rng)
    : geom_(geom) {
  const double fan_in = static_cast<double>(in_max * kernel * kernel);
  weight = ad::Parameter(name + ".weight", rng.normal_tensor(Shape{out_max, in_max, kernel, kernel}, std::sqrt(2.0 / fan_in)));
  if (with_bias) bias = ad::Parameter(name + ".bias", Tensor(Shape{out_max}), false);
}

ad::Var SliceableConv2d::forward(ad::Tape& tape, ad::Var x, std::size_t active_out) {
  ad::Var w = tape.param(weight);
  ad::Var b = bias ? tape.param(*bias) : ad::Var{};
  return ad::conv2d(x, w, active_out, geom_, b);
}

ad::Var SliceableConv2d::forward_at_width(ad::Tape& tape, ad::Var x, const WidthRule& out_rule, double ratio) {
  const std::size_t out = out_rule.channels(ratio);
  if (out > out_max()) throw ShapeError("rounded width exceeds layer capacity");
  return forward(tape, x, out);
}

std::size_t SliceableConv2d::madds(std::size_t in, std::size_t out, std::size_t in_h, std::size_t in_w) const {
  const std::size_t k = kernel();
  return out * out_extent(in_h) * out_extent(in_w) * in * k * k;
}

void SliceableConv2d::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
}

SliceableLinear::SliceableLinear(std::string name, std::size_t in_max, std::size_t out_max, bool with_bias, Rng& rng) {
  weight = ad::Parameter(name + ".weight", rng.normal_tensor(Shape{out_max, in_max}, std::sqrt(1.0 / static_cast<double>(in_max))));
  if (with_bias) bias = ad::Parameter(name + ".bias", Tensor(Shape{out_max}), false);
}

ad::Var SliceableLinear::forward(ad::Tape& tape, ad::Var x, std::size_t active_out) {
  ad::Var w = tape.param(weight);
  ad::Var b = bias ? tape.param(*bias) : ad::Var{};
  return ad::linear(x, w, active_out, b);
}

void SliceableLinear::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
}

std::size_t group_size_for(const std::vector<std::size_t>& widths, std::size_t max_group_size) {
  std::size_t g = 0;
  for (std::size_t w : widths) g = std::gcd(g, w);
  if (g == 0) throw ConfigError("no widths to derive a group size from");
  for (std::size_t d = std::min(g, std::max<std::size_t>(1, max_group_size)); d >= 1; --d) {
    if (g % d == 0) return d;
  }
  return 1;
}

SwitchableNorm::SwitchableNorm(std::string name, NormKind kind, std::size_t channels_max, std::size_t group_size,
                               float gamma_init)
    : gamma(name + ".gamma", Tensor(Shape{channels_max}, gamma_init), false),
      beta(name + ".beta", Tensor(Shape{channels_max}), false),
      kind_(kind),
      group_size_(group_size) {}

ad::Var SwitchableNorm::forward(ad::Tape& tape, ad::Var x, NormRegime regime,
                                const std::vector<std::size_t>* sample_widths) {
  ad::Var g = tape.param(gamma);
  ad::Var b = tape.param(beta);
  if (kind_ == NormKind::GroupNorm) return ad::group_norm(x, g, b, group_size_);

  const std::size_t width = x.dim(1);
  switch (regime) {
    case NormRegime::Batch:
      return ad::batch_norm(x, g, b);
    case NormRegime::Recalibrate: {
      ad::BatchStats observed;
      ad::Var y = ad::batch_norm(x, g, b, &observed);
      Accum& acc = pending_[width];
      if (acc.mean.empty()) {
        acc.mean.assign(width, 0.0);
        acc.var.assign(width, 0.0);
      }
      for (std::size_t c = 0; c < width; ++c) {
        acc.mean[c] += observed.mean[c];
        acc.var[c] += observed.var[c];
      }
      ++acc.batches;
      return y;
    }
    case NormRegime::Recorded:
      break;
  }
  if (sample_widths == nullptr) {
    auto it = table_.find(width);
    if (it == table_.end()) {
      throw StatisticsError(gamma.name + ": no recalibrated statistics for width " + std::to_string(width));
    }
    return ad::batch_norm_fixed(x, g, b, it->second.mean, it->second.var);
  }
  const std::size_t n = x.dim(0);
  if (sample_widths->size() != n) throw ShapeError("per-sample widths do not match batch size");
  Tensor mean(Shape{n, width});
  Tensor var(Shape{n, width}, 1.0f);
  for (std::size_t s = 0; s < n; ++s) {
    auto it = table_.find((*sample_widths)[s]);
    if (it == table_.end()) {
      throw StatisticsError(gamma.name + ": no recalibrated statistics for width " + std::to_string((*sample_widths)[s]));
    }
    const std::size_t w = std::min(width, it->second.mean.numel());
    std::copy_n(it->second.mean.data(), w, mean.data() + s * width);
    std::copy_n(it->second.var.data(), w, var.data() + s * width);
  }
  return ad::batch_norm_fixed(x, g, b, mean, var);
}

void SwitchableNorm::begin_recalibration(std::size_t width) { pending_.erase(width); }

void SwitchableNorm::commit_recalibration() {
  for (auto& [width, acc] : pending_) {
    if (acc.batches == 0) continue;
    Stats s{Tensor(Shape{width}), Tensor(Shape{width})};
    for (std::size_t c = 0; c < width; ++c) {
      s.mean[c] = static_cast<float>(acc.mean[c] / static_cast<double>(acc.batches));
      s.var[c] = static_cast<float>(acc.var[c] / static_cast<double>(acc.batches));
    }
    table_[width] = std::move(s);
  }
  pending_.clear();
}

void SwitchableNorm::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

}  // namespace dsnet
