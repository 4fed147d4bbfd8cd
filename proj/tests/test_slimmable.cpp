// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "dsnet/errors.hpp"
#include "dsnet/slimmable.hpp"
#include "oracles/oracles.hpp"

using namespace dsnet;

TEST(WidthRule, RoundsToIntervalMultiples) {
  EXPECT_EQ(round_channels(0.25, 64, 4), 16u);
  EXPECT_EQ(round_channels(0.35, 40, 8), 16u);  // 14 -> nearest multiple of 8
  EXPECT_EQ(round_channels(0.01, 64, 4), 4u);   // never below one interval
  EXPECT_EQ(round_channels(0.3125, 64, 8), 24u);  // 2.5 intervals round up
  EXPECT_THROW(round_channels(0.5, 30, 4), ConfigError);
  EXPECT_THROW(round_channels(0.0, 32, 4), ConfigError);
  for (double r : {0.25, 0.35, 0.5, 0.65, 0.8, 1.0, 1.25}) {
    for (std::size_t base : {16u, 32u, 48u, 64u}) {
      EXPECT_EQ(round_channels(r, base, 8), oracle::channels(r, base, 8)) << r << " " << base;
    }
  }
}

TEST(WidthRule, RejectsCollidingCandidates) {
  WidthRule ok{{0.25, 0.5, 0.75, 1.0}, 32, 4};
  EXPECT_NO_THROW(ok.validate());
  EXPECT_EQ(ok.all_channels(), (std::vector<std::size_t>{8, 16, 24, 32}));
  WidthRule collide{{0.5, 0.55}, 16, 8};
  EXPECT_THROW(collide.validate(), ConfigError);
  WidthRule unordered{{0.5, 0.25}, 32, 4};
  EXPECT_THROW(unordered.validate(), ConfigError);
  EXPECT_THROW(ok.index_of(0.3), ConfigError);
}

TEST(SliceableConv, PrefixOfWidestOutput) {
  Rng rng(1);
  SliceableConv2d conv("c", 6, 8, 3, {1, 1}, true, rng);
  conv.bias->value = rng.normal_tensor({8}, 1.0);
  Tensor x = rng.normal_tensor({2, 6, 5, 5}, 1.0);
  ad::Tape tape(false);
  const Tensor full = conv.forward(tape, tape.constant(x), 8).value();
  for (std::size_t active : {2u, 4u, 6u}) {
    const Tensor part = conv.forward(tape, tape.constant(x), active).value();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t o = 0; o < active; ++o)
        for (std::size_t p = 0; p < 25; ++p)
          EXPECT_NEAR(part[(b * active + o) * 25 + p], full[(b * 8 + o) * 25 + p], 1e-5);
  }
  EXPECT_EQ(conv.madds(6, 4, 5, 5), 4u * 25 * 6 * 9);
}

TEST(SliceableConv, NarrowInputUsesLeadingInputChannels) {
  Rng rng(2);
  SliceableConv2d conv("c", 6, 4, 3, {1, 1}, false, rng);
  Tensor x = rng.normal_tensor({1, 3, 4, 4}, 1.0);
  ad::Tape tape(false);
  const Tensor y = conv.forward(tape, tape.constant(x), 4).value();
  Tensor narrow(Shape{4, 3, 3, 3});
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 9; ++t) narrow[(o * 3 + c) * 9 + t] = conv.weight.value[(o * 6 + c) * 9 + t];
  EXPECT_LT(oracle::scaled_max_diff(y, oracle::conv2d(x, narrow, 1, 1)), 1e-5);
  EXPECT_THROW(conv.forward(tape, tape.constant(Tensor(Shape{1, 7, 4, 4})), 4), ShapeError);
}

TEST(SwitchableNorm, GroupNormIsPrefixInvariant) {
  // Channels per group are fixed, so normalizing a prefix equals the prefix of
  // normalizing everything.
  Rng rng(3);
  const std::size_t gs = group_size_for({8, 16, 24, 32}, 8);
  EXPECT_EQ(gs, 8u);
  SwitchableNorm norm("n", NormKind::GroupNorm, 32, gs);
  norm.gamma.value = rng.normal_tensor({32}, 1.0);
  norm.beta.value = rng.normal_tensor({32}, 1.0);
  Tensor x = rng.normal_tensor({2, 32, 3, 3}, 2.0);
  ad::Tape tape(false);
  const Tensor full = norm.forward(tape, tape.constant(x), NormRegime::Batch).value();
  Tensor prefix(Shape{2, 16, 3, 3});
  for (std::size_t b = 0; b < 2; ++b) std::copy_n(x.data() + b * 288, 144, prefix.data() + b * 144);
  const Tensor part = norm.forward(tape, tape.constant(prefix), NormRegime::Batch).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 144; ++i) EXPECT_NEAR(part[b * 144 + i], full[b * 288 + i], 1e-5);
}

TEST(SwitchableNorm, GroupSizeDividesEveryWidth) {
  EXPECT_EQ(group_size_for({12, 24, 36}, 8), 6u);
  EXPECT_EQ(group_size_for({20, 40}, 8), 5u);
  EXPECT_EQ(group_size_for({7}, 8), 7u);
  EXPECT_EQ(group_size_for({14, 21}, 4), 1u);
}

TEST(SwitchableNorm, BatchNormTablesPerWidth) {
  Rng rng(4);
  SwitchableNorm norm("n", NormKind::BatchNorm, 8, 1);
  ad::Tape tape(false);
  Tensor x4 = rng.normal_tensor({6, 4, 2, 2}, 3.0);
  EXPECT_THROW(norm.forward(tape, tape.constant(x4), NormRegime::Recorded), StatisticsError);

  norm.begin_recalibration(4);
  norm.forward(tape, tape.constant(x4), NormRegime::Recalibrate);
  norm.commit_recalibration();
  ASSERT_TRUE(norm.has_stats(4));
  EXPECT_FALSE(norm.has_stats(8));
  // A single recalibration batch stores exactly that batch's statistics, so
  // the recorded forward reproduces the batch-statistics forward.
  const Tensor a = norm.forward(tape, tape.constant(x4), NormRegime::Batch).value();
  const Tensor b = norm.forward(tape, tape.constant(x4), NormRegime::Recorded).value();
  EXPECT_LT(oracle::max_rel_diff(a, b, 1e-3), 1e-4);
}
