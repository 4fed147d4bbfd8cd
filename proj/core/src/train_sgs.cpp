// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/train_sgs.hpp"

#include <cmath>

#include "dsnet/errors.hpp"

namespace dsnet {

GateStrategy parse_strategy(const std::string& name) {
  if (name == "try-best") return GateStrategy::TryBest;
  if (name == "give-up") return GateStrategy::GiveUp;
  throw ConfigError("unknown strategy '" + name + "' (expected try-best or give-up)");
}

std::string strategy_name(GateStrategy s) { return s == GateStrategy::TryBest ? "try-best" : "give-up"; }

std::string difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::Easy:
      return "easy";
    case Difficulty::Hard:
      return "hard";
    case Difficulty::Dependent:
      return "dependent";
  }
  return "?";
}

Difficulty classify_difficulty(bool slimmest_correct, bool widest_correct) {
  if (slimmest_correct) return Difficulty::Easy;
  return widest_correct ? Difficulty::Dependent : Difficulty::Hard;
}

std::vector<Difficulty> label_difficulty(Supernet& net, const Tensor& x, std::span<const int> labels,
                                         NormRegime regime) {
  if (labels.size() != x.dim(0)) throw ShapeError("label count does not match batch");
  auto predict = [&](const PathDescriptor& path) {
    ad::Tape tape(false);
    return argmax_rows(net.forward_at_path(tape, tape.constant(x), path, regime).value());
  };
  const auto slim = predict(slimmest_path(net.config()));
  const auto wide = predict(widest_path(net.config()));
  std::vector<Difficulty> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = classify_difficulty(slim[i] == labels[i], wide[i] == labels[i]);
  }
  return out;
}

std::size_t gate_target_index(Difficulty d, GateStrategy s, std::size_t candidates) {
  if (candidates == 0) throw ConfigError("gate without candidates");
  return gate_target_index(d, s, 0, candidates - 1);
}

std::size_t gate_target_index(Difficulty d, GateStrategy s, std::size_t lo, std::size_t hi) {
  if (lo > hi) throw ConfigError("empty candidate range");
  switch (d) {
    case Difficulty::Easy:
      return lo;
    case Difficulty::Dependent:
      return hi;
    case Difficulty::Hard:
      return s == GateStrategy::TryBest ? hi : lo;
  }
  return lo;
}

ad::Var sgs_loss(const std::vector<ad::Var>& probs, std::span<const Difficulty> labels, GateStrategy strategy,
                 std::span<const std::pair<std::size_t, std::size_t>> bounds) {
  if (probs.empty()) throw ContractError("sgs_loss needs at least one gated stage");
  if (!bounds.empty() && bounds.size() != probs.size()) throw ShapeError("one candidate range per stage expected");
  ad::Var total;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const ad::Var& p = probs[i];
    const Tensor& v = p.value();
    if (v.rank() != 2 || v.dim(0) != labels.size()) throw ShapeError("gate probabilities must be [N, g]");
    const std::size_t n = v.dim(0);
    const std::size_t g = v.dim(1);
    Tensor target(Shape{n, g});
    for (std::size_t s = 0; s < n; ++s) {
      double sum = 0.0;
      for (std::size_t j = 0; j < g; ++j) {
        if (v[s * g + j] < 0.0f) throw ContractError("gate probabilities must be non-negative");
        sum += v[s * g + j];
      }
      if (std::abs(sum - 1.0) > 1e-4) throw ContractError("gate probabilities are not normalized");
      const std::size_t t = bounds.empty() ? gate_target_index(labels[s], strategy, g)
                                           : gate_target_index(labels[s], strategy, bounds[i].first, bounds[i].second);
      if (t >= g) throw ShapeError("candidate range exceeds gate width");
      target[s * g + t] = 1.0f;
    }
    ad::Var term = ad::prob_cross_entropy(p, target);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

ad::Var expected_madds(const std::vector<ad::Var>& probs, const std::vector<double>& table) {
  if (probs.empty()) throw ContractError("expected_madds needs at least one gated stage");
  const std::size_t n = probs.front().dim(0);
  std::vector<std::size_t> radix;
  std::size_t space = 1;
  for (const ad::Var& p : probs) {
    if (p.value().rank() != 2 || p.dim(0) != n) throw ShapeError("gate probabilities must share the batch axis");
    radix.push_back(p.dim(1));
    space *= p.dim(1);
  }
  if (table.size() != space) throw ShapeError("MAdds table does not match the routing space");
  const std::size_t stages = probs.size();

  // Mixed-radix digits of every path, first stage most significant.
  std::vector<std::size_t> digits(space * stages);
  for (std::size_t k = 0; k < space; ++k) {
    std::size_t r = k;
    for (std::size_t s = stages; s-- > 0;) {
      digits[k * stages + s] = r % radix[s];
      r /= radix[s];
    }
  }
  auto prob = [&](std::size_t s, std::size_t sample, std::size_t j) {
    return static_cast<double>(probs[s].value()[sample * radix[s] + j]);
  };

  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    double e = 0.0;
    for (std::size_t k = 0; k < space; ++k) {
      double w = table[k];
      for (std::size_t s = 0; s < stages; ++s) w *= prob(s, i, digits[k * stages + s]);
      e += w;
    }
    out[i] = static_cast<float>(e);
  }

  ad::Tape& tape = *probs.front().tape();
  std::vector<ad::Var> inputs = probs;
  return tape.record(out, std::span<const ad::Var>(inputs),
                     [probs, table, digits, radix, n, space, stages](ad::Tape& t, const Tensor& grad) {
                       for (std::size_t s = 0; s < stages; ++s) {
                         if (!t.requires_grad(probs[s])) continue;
                         Tensor g(probs[s].shape());
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t k = 0; k < space; ++k) {
                             double w = table[k];
                             for (std::size_t o = 0; o < stages; ++o) {
                               if (o == s) continue;
                               w *= static_cast<double>(probs[o].value()[i * radix[o] + digits[k * stages + o]]);
                             }
                             g[i * radix[s] + digits[k * stages + s]] += static_cast<float>(w * grad[i]);
                           }
                         }
                         t.accumulate(probs[s], g);
                       }
                     });
}

double complexity_loss(double expected, double total) {
  if (!(total > 0.0)) throw ConfigError("complexity normalizer must be positive");
  const double r = expected / total;
  return r * r;
}

ad::Var complexity_loss(ad::Var expected, double total) {
  if (!(total > 0.0)) throw ConfigError("complexity normalizer must be positive");
  // Divides by T in double so the widest path lands on exactly 1.
  const Tensor& e = expected.value();
  const std::size_t n = e.numel();
  if (n == 0) throw ShapeError("complexity loss of an empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = static_cast<double>(e[i]) / total;
    acc += r * r;
  }
  ad::Tape& tape = *expected.tape();
  return tape.record(Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))), {expected},
                     [expected, total, n](ad::Tape& t, const Tensor& grad) {
                       const Tensor& v = expected.value();
                       Tensor g(v.shape());
                       const double k = 2.0 * static_cast<double>(grad[0]) / (total * total * static_cast<double>(n));
                       for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<float>(k * v[i]);
                       t.accumulate(expected, std::move(g));
                     });
}

void SgsConfig::validate() const {
  if (lambda_cls < 0.0 || lambda_cplx < 0.0 || lambda_sgs < 0.0) throw ConfigError("loss weights must be non-negative");
  if (!(tau > 0.0f)) throw ConfigError("temperature must be positive");
}

double mean_routed_madds(const SupernetConfig& config, const std::vector<std::vector<std::size_t>>& choice) {
  if (choice.empty() || choice.front().empty()) return 0.0;
  const auto table = madds_table(config);
  const auto gated = config.gated_stages();
  const std::size_t n = choice.front().size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (std::size_t s = 0; s < gated.size(); ++s) k = k * config.stages[gated[s]].candidates.size() + choice[s][i];
    sum += table[k];
  }
  return sum / static_cast<double>(n);
}

GateReport joint_gate_step(Supernet& net, const Tensor& x, std::span<const int> labels,
                           std::span<const Difficulty> labels_difficulty, const SgsConfig& config, Sgd& optimizer,
                           double lr, Rng& rng, NormRegime regime) {
  config.validate();
  const SupernetConfig& cfg = net.config();
  const std::size_t n = x.dim(0);
  if (labels.size() != n || labels_difficulty.size() != n) throw ShapeError("labels do not match batch");

  std::vector<Tensor> noise;
  if (config.gumbel_noise) {
    for (std::size_t s : cfg.gated_stages()) noise.push_back(rng.gumbel_tensor(Shape{n, cfg.stages[s].candidates.size()}));
  }
  const auto slimming = net.slimming_parameters();
  Sgd::zero_grad(slimming);

  ad::Tape tape;
  Supernet::GateOutputs gates;
  ad::Var logits = net.forward_gated(tape, tape.constant(x), regime, config.gumbel_noise ? &noise : nullptr,
                                     config.tau, &gates);
  std::vector<ad::Var> probs;
  for (const ad::Var& s : gates.scores) probs.push_back(ad::softmax(s));

  const std::vector<double> table = madds_table(cfg);
  const double widest = count_madds(cfg, widest_path(cfg));

  ad::Var cls = ad::cross_entropy(logits, labels);
  ad::Var cplx = complexity_loss(expected_madds(probs, table), widest);
  std::vector<std::pair<std::size_t, std::size_t>> bounds;
  for (std::size_t i = 0; i < probs.size(); ++i) bounds.push_back(net.slimming_gate(i).allowed_bounds());
  ad::Var sgs = sgs_loss(probs, labels_difficulty, config.strategy, bounds);
  ad::Var total = ad::add(ad::add(ad::scale(cls, static_cast<float>(config.lambda_cls)),
                                  ad::scale(cplx, static_cast<float>(config.lambda_cplx))),
                          ad::scale(sgs, static_cast<float>(config.lambda_sgs)));

  GateReport report;
  report.cls = cls.value().item();
  report.cplx = cplx.value().item();
  report.sgs = sgs.value().item();
  report.total = config.lambda_cls * report.cls + config.lambda_cplx * report.cplx + config.lambda_sgs * report.sgs;
  if (!std::isfinite(report.total)) throw NumericError("gate loss is not finite");
  report.choice = gates.choice;
  report.mean_madds = mean_routed_madds(cfg, gates.choice);

  tape.backward(total);
  optimizer.step(slimming, lr);
  return report;
}

}  // namespace dsnet
