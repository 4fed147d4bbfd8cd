// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

// Channel-selection kernels on one 64-channel 3x3 layer at 28x28, batch 8.
// The argument is the active channel count.

#include <benchmark/benchmark.h>

#include <numeric>

#include "dsnet/ops.hpp"
#include "dsnet/random.hpp"

namespace {

using dsnet::Tensor;

struct Layer {
  Tensor x;
  Tensor w;
  Layer() {
    dsnet::set_single_threaded_kernels();
    dsnet::Rng rng(1);
    x = rng.normal_tensor({8, 64, 28, 28}, 1.0);
    w = rng.normal_tensor({64, 64, 3, 3}, 0.05);
  }
};

const Layer& layer() {
  static const Layer l;
  return l;
}

void BM_ConvFull(benchmark::State& state) {
  const Layer& l = layer();
  for (auto _ : state) benchmark::DoNotOptimize(dsnet::conv2d(l.x, l.w, {1, 1}));
}
BENCHMARK(BM_ConvFull)->Unit(benchmark::kMillisecond);

void BM_ConvSliced(benchmark::State& state) {
  const Layer& l = layer();
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dsnet::conv2d_sliced(l.x, l.w, k, {1, 1}));
}
BENCHMARK(BM_ConvSliced)->Arg(16)->Arg(32)->Arg(48)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ConvMasked(benchmark::State& state) {
  const Layer& l = layer();
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dsnet::conv2d_masked(l.x, l.w, k, {1, 1}));
}
BENCHMARK(BM_ConvMasked)->Arg(16)->Arg(32)->Arg(48)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ConvIndexed(benchmark::State& state) {
  const Layer& l = layer();
  std::vector<std::size_t> idx(static_cast<std::size_t>(state.range(0)));
  std::iota(idx.begin(), idx.end(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(dsnet::conv2d_indexed(l.x, l.w, idx, {1, 1}));
}
BENCHMARK(BM_ConvIndexed)->Arg(16)->Arg(32)->Arg(48)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Im2col(benchmark::State& state) {
  const Layer& l = layer();
  for (auto _ : state) benchmark::DoNotOptimize(dsnet::im2col(l.x, 3, {1, 1}));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(l.x.numel() * 9 * sizeof(float)));
}
BENCHMARK(BM_Im2col)->Unit(benchmark::kMillisecond);

}  // namespace
