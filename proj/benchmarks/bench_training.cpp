// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

// Whole-network steps on the residual preset with a batch of 64.

#include <benchmark/benchmark.h>

#include "dsnet/ops.hpp"
#include "dsnet/optim.hpp"
#include "dsnet/supernet.hpp"
#include "dsnet/train_ieb.hpp"
#include "dsnet/train_sgs.hpp"

namespace {

using namespace dsnet;

struct Fixture {
  Tensor x;
  std::vector<int> labels;
  Fixture() {
    configure_runtime();
    Rng rng(3);
    x = rng.normal_tensor({64, 3, 32, 32}, 1.0);
    for (int i = 0; i < 64; ++i) labels.push_back(i % 10);
  }
};

const Fixture& data() {
  static const Fixture f;
  return f;
}

void BM_IebStep(benchmark::State& state) {
  const Fixture& f = data();
  Supernet net(SupernetConfig::residual_analog(), 1);
  EmaState ema(net);
  Sgd opt(0.9, 1e-4);
  Rng rng(2);
  const IebConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(ieb_step(net, &ema, f.x, f.labels, rng, config, opt, 0.01, 0.999));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 64);
}
BENCHMARK(BM_IebStep)->Unit(benchmark::kMillisecond);

void BM_GateStep(benchmark::State& state) {
  const Fixture& f = data();
  Supernet net(SupernetConfig::residual_analog(), 1);
  net.set_training_stage(TrainingStage::GateTraining);
  Sgd opt(0.9, 0.0);
  Rng rng(2);
  const std::vector<Difficulty> d(64, Difficulty::Dependent);
  const SgsConfig config;
  for (auto _ : state) {
    benchmark::DoNotOptimize(joint_gate_step(net, f.x, f.labels, d, config, opt, 0.01, rng, NormRegime::Batch));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 64);
}
BENCHMARK(BM_GateStep)->Unit(benchmark::kMillisecond);

void BM_RoutedInference(benchmark::State& state) {
  const Fixture& f = data();
  Supernet net(SupernetConfig::residual_analog(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_routed(f.x, NormRegime::Batch));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 64);
}
BENCHMARK(BM_RoutedInference)->Unit(benchmark::kMillisecond);

}  // namespace
