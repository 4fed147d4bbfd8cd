// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/train_ieb.hpp"

#include <cmath>

#include "dsnet/errors.hpp"

namespace dsnet {

Ablation parse_ablation(const std::string& name) {
  if (name == "plain") return Ablation::Plain;
  if (name == "ema") return Ablation::Ema;
  if (name == "ieb") return Ablation::Ieb;
  throw ConfigError("unknown ablation '" + name + "' (expected plain, ema or ieb)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Plain:
      return "plain";
    case Ablation::Ema:
      return "ema";
    case Ablation::Ieb:
      return "ieb";
  }
  return "?";
}

EmaState::EmaState(const Supernet& online) : shadow_(online.clone()) { resync(); }

void EmaState::resync() {
  acc_.clear();
  for (ad::Parameter* p : shadow_.parameters()) acc_.emplace_back(p->value.values().begin(), p->value.values().end());
}

void EmaState::update(Supernet& online, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("EMA momentum must lie in [0, 1]");
  const auto src = online.parameters();
  const auto dst = shadow_.parameters();
  if (src.size() != dst.size() || acc_.size() != dst.size()) throw ContractError("EMA shadow parameter count drifted");
  const double b = 1.0 - alpha;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name || src[i]->value.shape() != dst[i]->value.shape() ||
        acc_[i].size() != src[i]->value.numel()) {
      throw ContractError("EMA shadow mismatch at " + src[i]->name);
    }
    const float* s = src[i]->value.data();
    float* d = dst[i]->value.data();
    double* a = acc_[i].data();
    for (std::size_t k = 0, n = acc_[i].size(); k < n; ++k) {
      a[k] = alpha * a[k] + b * static_cast<double>(s[k]);
      d[k] = static_cast<float>(a[k]);
    }
  }
  ++steps_;
}

void IebConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0) || !(alpha_start >= 0.0 && alpha_start <= 1.0)) {
    throw ConfigError("EMA momentum must lie in [0, 1]");
  }
  if (!(ramp_fraction >= 0.0 && ramp_fraction <= 1.0)) throw ConfigError("ramp fraction must lie in [0, 1]");
}

double ema_alpha(const IebConfig& config, std::size_t step, std::size_t total_steps) {
  const double ramp = config.ramp_fraction * static_cast<double>(total_steps);
  if (ramp <= 0.0 || static_cast<double>(step) >= ramp) return config.alpha;
  return config.alpha_start + (config.alpha - config.alpha_start) * (static_cast<double>(step) / ramp);
}

Tensor ensemble_target(const Tensor& widest, const std::vector<Tensor>& randoms) {
  Tensor out = widest.clone();
  for (const Tensor& r : randoms) {
    if (r.shape() != widest.shape()) {
      throw ShapeError("ensemble member " + shape_str(r.shape()) + " vs " + shape_str(widest.shape()));
    }
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += r[i];
  }
  const float inv = 1.0f / static_cast<float>(randoms.size() + 1);
  for (float& v : out.values()) v *= inv;
  return out;
}

namespace {

Tensor soft_labels(Supernet& net, const Tensor& x, const PathDescriptor& path) {
  ad::Tape tape(false);
  return softmax(net.forward_at_path(tape, tape.constant(x), path, NormRegime::Batch).value());
}

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " loss is not finite");
  return v;
}

}  // namespace

IebReport ieb_step(Supernet& net, EmaState* ema, const Tensor& x, std::span<const int> labels, Rng& rng,
                   const IebConfig& config, Sgd& optimizer, double lr, double alpha) {
  config.validate();
  if (config.ablation != Ablation::Plain && ema == nullptr) throw ConfigError("EMA ablations need an EMA state");
  IebReport report;
  report.paths = sample_sandwich(net.config(), rng, config.random_paths);
  const PathDescriptor& widest = report.paths[0];
  const PathDescriptor& slimmest = report.paths[1];

  const auto params = net.parameters();
  Sgd::zero_grad(params);

  // Each path gets its own tape; gradients accumulate in the parameters.
  auto train_path = [&](const PathDescriptor& path, auto&& loss_of) {
    ad::Tape tape;
    ad::Var logits = net.forward_at_path(tape, tape.constant(x), path, NormRegime::Batch);
    ad::Var loss = loss_of(logits);
    tape.backward(loss);
    ++report.online_forwards;
    return std::pair<double, Tensor>{loss.value().item(), logits.value()};
  };

  auto [widest_loss, widest_logits] =
      train_path(widest, [&](ad::Var logits) { return ad::cross_entropy(logits, labels); });
  report.widest = finite_or_throw(widest_loss, "widest");

  Tensor widest_target;
  std::vector<Tensor> random_targets;
  if (config.ablation == Ablation::Plain) {
    widest_target = softmax(widest_logits);
  } else {
    widest_target = soft_labels(ema->shadow(), x, widest);
    ++report.target_forwards;
  }

  for (std::size_t i = 2; i < report.paths.size(); ++i) {
    const PathDescriptor& path = report.paths[i];
    auto [loss, unused] = train_path(path, [&](ad::Var logits) { return ad::soft_cross_entropy(logits, widest_target); });
    report.random += finite_or_throw(loss, "random-path");
    if (config.ablation == Ablation::Ieb) {
      random_targets.push_back(soft_labels(ema->shadow(), x, path));
      ++report.target_forwards;
    }
  }

  const Tensor slim_target =
      config.ablation == Ablation::Ieb ? ensemble_target(widest_target, random_targets) : widest_target;
  auto [slim_loss, unused] =
      train_path(slimmest, [&](ad::Var logits) { return ad::soft_cross_entropy(logits, slim_target); });
  report.slimmest = finite_or_throw(slim_loss, "slimmest");
  report.total = report.widest + report.random + report.slimmest;

  optimizer.step(params, lr);
  if (ema != nullptr) ema->update(net, alpha);
  return report;
}

}  // namespace dsnet
