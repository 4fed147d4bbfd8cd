// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/gate.hpp"

#include <algorithm>
#include <cmath>

#include "dsnet/errors.hpp"

namespace dsnet {

double snap_to_candidate(double ratio, const std::vector<double>& candidates) {
  if (candidates.empty()) throw ConfigError("empty candidate ratio list");
  double best = candidates.front();
  double best_dist = std::abs(ratio - best);
  for (double c : candidates) {
    const double d = std::abs(ratio - c);
    if (d < best_dist - 1e-12 || (std::abs(d - best_dist) <= 1e-12 && c < best)) {
      best = c;
      best_dist = d;
    }
  }
  return best;
}

std::size_t gate_hidden_dim(std::size_t channels_max) { return std::max<std::size_t>(channels_max / 16, 8); }

DoubleHeadedGate::DoubleHeadedGate(std::string name, std::size_t in_max, std::vector<double> candidates,
                                   HeadDesign design, bool slimming_head, Rng& rng)
    : candidates_(std::move(candidates)), design_(design), slimming_head_(slimming_head) {
  const std::size_t d = gate_hidden_dim(in_max);
  const std::size_t g = design_ == HeadDesign::OneHot ? std::max<std::size_t>(candidates_.size(), 1) : 1;
  w1 = ad::Parameter(name + ".w1", rng.normal_tensor(Shape{d, in_max}, std::sqrt(2.0 / static_cast<double>(in_max))), false);
  w2 = ad::Parameter(name + ".w2", rng.normal_tensor(Shape{g, d}, 0.01), false);
  w3 = ad::Parameter(name + ".w3", Tensor(Shape{in_max, d}), false);
}

ad::Var DoubleHeadedGate::hidden(ad::Tape& tape, ad::Var encoded) {
  if (encoded.dim(1) > in_max()) {
    throw ShapeError("gate input width " + std::to_string(encoded.dim(1)) + " exceeds " + std::to_string(in_max()));
  }
  return ad::relu(ad::linear(encoded, tape.param(w1), hidden_dim()));
}

ad::Var DoubleHeadedGate::attend(ad::Tape& tape, ad::Var x, ad::Var hidden) {
  const std::size_t width = x.dim(1);
  if (width > in_max()) throw ShapeError("attention input width exceeds gate capacity");
  ad::Var pre = ad::linear(hidden, tape.param(w3), width);
  return ad::channel_scale(x, ad::add_scalar(ad::tanh(pre), 1.0f));
}

DoubleHeadedGate::Slimming DoubleHeadedGate::slim(ad::Tape& tape, ad::Var hidden, float tau, const Tensor& noise) {
  if (!slimming_head_) throw ConfigError("gate has no slimming head");
  Slimming out;
  out.scores = ad::linear(hidden, tape.param(w2), w2.value.dim(0));
  const std::size_t n = hidden.dim(0);
  if (!allowed_.empty()) {
    const std::size_t g = allowed_.size();
    Tensor bias(Shape{n, g});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < g; ++j) bias[s * g + j] = allowed_[j] ? 0.0f : -1e4f;
    }
    out.scores = ad::add(out.scores, tape.constant(std::move(bias)));
  }
  if (design_ == HeadDesign::OneHot) {
    out.one_hot = ad::straight_through_argmax(out.scores, tau, noise);
    const Tensor& oh = out.one_hot.value();
    const std::size_t g = oh.dim(1);
    out.choice.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      out.choice[s] = static_cast<std::size_t>(std::max_element(oh.data() + s * g, oh.data() + (s + 1) * g) - (oh.data() + s * g));
    }
  } else {
    out.choice.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      const double r = 1.0 / (1.0 + std::exp(-static_cast<double>(out.scores.value()[s])));
      const double snapped = snap_to_candidate(r, candidates_);
      out.choice[s] = static_cast<std::size_t>(std::find(candidates_.begin(), candidates_.end(), snapped) - candidates_.begin());
    }
  }
  return out;
}

void DoubleHeadedGate::set_allowed(std::vector<bool> allowed) {
  if (allowed.empty()) {
    allowed_.clear();
    return;
  }
  if (design_ != HeadDesign::OneHot) throw ConfigError("candidate restriction needs the one-hot head");
  if (allowed.size() != candidates_.size()) throw ConfigError("allowed mask does not match the candidate list");
  if (std::none_of(allowed.begin(), allowed.end(), [](bool b) { return b; })) {
    throw ConfigError("candidate restriction leaves no candidate");
  }
  allowed_ = std::move(allowed);
}

std::pair<std::size_t, std::size_t> DoubleHeadedGate::allowed_bounds() const {
  const std::size_t g = std::max<std::size_t>(candidates_.size(), 1);
  if (allowed_.empty()) return {0, g - 1};
  std::size_t lo = 0;
  while (!allowed_[lo]) ++lo;
  std::size_t hi = g - 1;
  while (!allowed_[hi]) --hi;
  return {lo, hi};
}

std::vector<double> DoubleHeadedGate::ratios(const Slimming& s) const {
  std::vector<double> r;
  r.reserve(s.choice.size());
  for (std::size_t c : s.choice) r.push_back(candidates_.at(c));
  return r;
}

std::size_t DoubleHeadedGate::madds(std::size_t in_width) const {
  const std::size_t d = hidden_dim();
  std::size_t total = 2 * d * in_width;
  if (slimming_head_) total += w2.value.dim(0) * d;
  return total;
}

void DoubleHeadedGate::collect(std::vector<ad::Parameter*>& out) {
  out.push_back(&w1);
  if (slimming_head_) out.push_back(&w2);
  out.push_back(&w3);
}

}  // namespace dsnet
