// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dsnet/errors.hpp"
#include "dsnet/optim.hpp"
#include "dsnet/train_ieb.hpp"
#include "dsnet/train_sgs.hpp"
#include "oracles/oracles.hpp"

using namespace dsnet;

namespace {

SupernetConfig toy() {
  SupernetConfig c;
  c.height = c.width = 8;
  c.stem_channels = 8;
  c.stages = {{1, 16, 1, {0.25, 0.5, 1.0}}, {1, 16, 2, {0.5, 1.0}}};
  c.classes = 4;
  return c;
}

Tensor batch(Rng& rng, std::size_t n) { return rng.normal_tensor({n, 3, 8, 8}, 1.0); }

}  // namespace

TEST(Optim, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 100), 0.1);
  EXPECT_NEAR(cosine_lr(0.1, 100, 100), 0.001, 1e-12);
  EXPECT_NEAR(cosine_lr(0.1, 50, 100), 0.0505, 1e-12);
  EXPECT_GT(cosine_lr(0.1, 10, 100), cosine_lr(0.1, 20, 100));
}

TEST(Optim, SgdMomentumAndDecay) {
  ad::Parameter w("w", Tensor(Shape{1}, 1.0f), true);
  ad::Parameter b("b", Tensor(Shape{1}, 1.0f), false);
  Sgd opt(0.9, 0.1);
  w.grad = Tensor(Shape{1}, 0.5f);
  b.grad = Tensor(Shape{1}, 0.5f);
  opt.step({&w, &b}, 0.1);
  EXPECT_NEAR(w.value[0], 1.0 - 0.1 * (0.5 + 0.1), 1e-6);
  EXPECT_NEAR(b.value[0], 1.0 - 0.1 * 0.5, 1e-6);
  const double v1 = 0.6;
  w.grad = Tensor(Shape{1}, 0.5f);
  const double w1 = 1.0 - 0.06;
  opt.step({&w}, 0.1);
  EXPECT_NEAR(w.value[0], w1 - 0.1 * (0.9 * v1 + 0.5 + 0.1 * w1), 1e-6);
  ad::Parameter frozen("f", Tensor(Shape{1}, 1.0f));
  frozen.trainable = false;
  frozen.grad = Tensor(Shape{1}, 1.0f);
  opt.step({&frozen}, 0.1);
  EXPECT_EQ(frozen.value[0], 1.0f);
  EXPECT_THROW(opt.step({&w}, -1.0), ConfigError);
}

TEST(Ema, ClosedFormOverThousandSteps) {
  Supernet online(toy(), 1);
  EmaState ema(online);
  Rng rng(2);
  const double alpha = 0.999;
  auto params = online.parameters();
  // Closed form: theta'_T = a^T theta_0 + (1 - a) sum_t a^(T - t) theta_t.
  std::vector<std::vector<double>> closed;
  for (ad::Parameter* p : params) closed.emplace_back(p->value.values().begin(), p->value.values().end());
  std::vector<std::vector<double>> weighted(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) weighted[i].assign(params[i]->value.numel(), 0.0);
  const std::size_t steps = 1000;
  for (std::size_t t = 1; t <= steps; ++t) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (float& v : params[i]->value.values()) v = static_cast<float>(rng.normal(0.0, 1.0));
      for (std::size_t k = 0; k < weighted[i].size(); ++k) {
        weighted[i][k] += std::pow(alpha, static_cast<double>(steps - t)) * params[i]->value[k];
      }
    }
    ema.update(online, alpha);
  }
  const auto shadow = ema.shadow().parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < weighted[i].size(); ++k) {
      const double expect = std::pow(alpha, static_cast<double>(steps)) * closed[i][k] + (1 - alpha) * weighted[i][k];
      worst = std::max(worst, std::abs(expect - static_cast<double>(shadow[i]->value[k])));
    }
  }
  EXPECT_LT(worst, 1e-6);
  EXPECT_EQ(ema.steps(), steps);
}

TEST(Ema, AlphaRamp) {
  IebConfig c;
  EXPECT_DOUBLE_EQ(ema_alpha(c, 0, 1000), 0.99);
  EXPECT_NEAR(ema_alpha(c, 25, 1000), 0.9945, 1e-12);
  EXPECT_DOUBLE_EQ(ema_alpha(c, 50, 1000), 0.999);
  EXPECT_DOUBLE_EQ(ema_alpha(c, 999, 1000), 0.999);
}

TEST(Ieb, EnsembleTargetIsMean) {
  Tensor a(Shape{1, 2}, std::vector<float>{0.2f, 0.8f});
  Tensor b(Shape{1, 2}, std::vector<float>{0.6f, 0.4f});
  Tensor c(Shape{1, 2}, std::vector<float>{0.4f, 0.6f});
  Tensor m = ensemble_target(a, {b, c});
  EXPECT_NEAR(m[0], 0.4, 1e-6);
  EXPECT_NEAR(m[1], 0.6, 1e-6);
  EXPECT_THROW(ensemble_target(a, {Tensor(Shape{2, 2})}), ShapeError);
}

TEST(Ieb, StepAccountingPerAblation) {
  Rng data(3);
  const Tensor x = batch(data, 8);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  for (Ablation a : {Ablation::Plain, Ablation::Ema, Ablation::Ieb}) {
    Supernet net(toy(), 4);
    EmaState ema(net);
    Sgd opt;
    Rng rng(5);
    IebConfig cfg;
    cfg.ablation = a;
    const IebReport r = ieb_step(net, a == Ablation::Plain ? nullptr : &ema, x, labels, rng, cfg, opt, 0.05, 0.99);
    EXPECT_EQ(r.online_forwards, 4u);
    EXPECT_EQ(r.target_forwards, a == Ablation::Plain ? 0u : a == Ablation::Ema ? 1u : 3u);
    EXPECT_TRUE(std::isfinite(r.total));
    EXPECT_NEAR(r.total, r.widest + r.random + r.slimmest, 1e-9);
    EXPECT_EQ(r.paths[0], widest_path(net.config()));
    EXPECT_EQ(r.paths[1], slimmest_path(net.config()));
  }
  Supernet net(toy(), 4);
  Sgd opt;
  Rng rng(5);
  EXPECT_THROW(ieb_step(net, nullptr, x, labels, rng, IebConfig{}, opt, 0.05, 0.99), ConfigError);
}

TEST(Ieb, TrainingReducesLoss) {
  Rng data(6);
  const Tensor x = batch(data, 16);
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) labels.push_back(i % 4);
  Supernet net(toy(), 7);
  EmaState ema(net);
  Sgd opt;
  Rng rng(8);
  IebConfig cfg;
  const double first = ieb_step(net, &ema, x, labels, rng, cfg, opt, 0.05, 0.9).widest;
  double last = first;
  for (int i = 0; i < 40; ++i) last = ieb_step(net, &ema, x, labels, rng, cfg, opt, 0.05, 0.9).widest;
  EXPECT_LT(last, first);
}

TEST(Sgs, DifficultyAndTargets) {
  EXPECT_EQ(classify_difficulty(true, true), Difficulty::Easy);
  EXPECT_EQ(classify_difficulty(true, false), Difficulty::Easy);
  EXPECT_EQ(classify_difficulty(false, true), Difficulty::Dependent);
  EXPECT_EQ(classify_difficulty(false, false), Difficulty::Hard);
  EXPECT_EQ(gate_target_index(Difficulty::Easy, GateStrategy::TryBest, 4), 0u);
  EXPECT_EQ(gate_target_index(Difficulty::Dependent, GateStrategy::GiveUp, 4), 3u);
  EXPECT_EQ(gate_target_index(Difficulty::Hard, GateStrategy::TryBest, 4), 3u);
  EXPECT_EQ(gate_target_index(Difficulty::Hard, GateStrategy::GiveUp, 4), 0u);
  EXPECT_EQ(gate_target_index(Difficulty::Easy, GateStrategy::TryBest, 1, 2), 1u);
  EXPECT_EQ(parse_strategy("give-up"), GateStrategy::GiveUp);
  EXPECT_THROW(parse_strategy("best"), ConfigError);
}

TEST(Sgs, LossRejectsUnnormalizedRows) {
  ad::Tape tape;
  ad::Var bad = tape.constant(Tensor(Shape{1, 2}, std::vector<float>{0.7f, 0.7f}));
  const std::vector<Difficulty> d{Difficulty::Easy};
  EXPECT_THROW(sgs_loss({bad}, d, GateStrategy::TryBest), ContractError);
  ad::Var good = tape.constant(Tensor(Shape{1, 2}, std::vector<float>{0.25f, 0.75f}));
  EXPECT_NEAR(sgs_loss({good}, d, GateStrategy::TryBest).value().item(), -std::log(0.25), 1e-6);
}

TEST(Sgs, ExpectedMaddsMatchesEnumerationAndGradient) {
  const SupernetConfig c = toy();
  const auto table = madds_table(c);
  Rng rng(9);
  const Tensor s0 = rng.normal_tensor({2, 3}, 1.0), s1 = rng.normal_tensor({2, 2}, 1.0);
  ad::Tape tape(false);
  const Tensor p0 = ad::softmax(tape.constant(s0)).value(), p1 = ad::softmax(tape.constant(s1)).value();
  const Tensor e = expected_madds({tape.constant(p0), tape.constant(p1)}, table).value();
  for (std::size_t n = 0; n < 2; ++n) {
    double ref = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        ref += p0[n * 3 + i] * p1[n * 2 + j] * count_madds(c, PathDescriptor{{c.stages[0].candidates[i], c.stages[1].candidates[j]}});
    EXPECT_NEAR(e[n], ref, ref * 1e-6);
  }
  const double total = table.back();
  const auto check = oracle::check_gradients(
      [&](ad::Tape&, const std::vector<ad::Var>& l) {
        return complexity_loss(expected_madds({ad::softmax(l[0]), ad::softmax(l[1])}, table), total);
      },
      {s0, s1});
  EXPECT_LT(check.worst(), 1e-3);
}

TEST(Sgs, ComplexityLossNormalizer) {
  EXPECT_EQ(complexity_loss(1234.0, 1234.0), 1.0);
  const SupernetConfig cfg = SupernetConfig::residual_analog();
  const auto table = madds_table(cfg);
  ad::Tape tape;
  std::vector<ad::Var> probs;
  for (std::size_t s : cfg.gated_stages()) {
    const std::size_t g = cfg.stages[s].candidates.size();
    Tensor p(Shape{3, g});
    for (std::size_t r = 0; r < 3; ++r) p[r * g + g - 1] = 1.0f;
    probs.push_back(tape.variable(p));
  }
  EXPECT_EQ(complexity_loss(expected_madds(probs, table), table.back()).value().item(), 1.0f);
  EXPECT_THROW(complexity_loss(1.0, 0.0), ConfigError);
  SgsConfig c;
  c.lambda_cplx = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Sgs, JointStepTouchesOnlySlimmingHeads) {
  Supernet net(toy(), 10);
  net.set_training_stage(TrainingStage::GateTraining);
  Rng rng(11);
  const Tensor x = batch(rng, 8);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  const auto diff = label_difficulty(net, x, labels, NormRegime::Batch);
  std::vector<Tensor> before;
  for (ad::Parameter* p : net.parameters()) before.push_back(p->value.clone());
  Sgd opt(0.9, 0.0);
  SgsConfig cfg;
  const GateReport r = joint_gate_step(net, x, labels, diff, cfg, opt, 0.1, rng, NormRegime::Batch);
  EXPECT_TRUE(std::isfinite(r.total));
  const auto slim = net.slimming_parameters();
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool is_slim = std::find(slim.begin(), slim.end(), params[i]) != slim.end();
    bool same = true;
    for (std::size_t k = 0; k < before[i].numel(); ++k) same = same && before[i][k] == params[i]->value[k];
    EXPECT_EQ(same, !is_slim) << params[i]->name;
  }
}
