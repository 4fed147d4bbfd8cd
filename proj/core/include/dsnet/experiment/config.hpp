// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsnet/supernet.hpp"

namespace dsnet::experiment {

struct DataConfig {
  /// "synthetic", "cifar" or "idx".
  std::string source = "synthetic";
  /// CIFAR batch directory, or the directory synthetic data is written to.
  std::string dir;
  std::string train_images, train_labels, test_images, test_labels;  ///< IDX files
  std::size_t train_subset = 0;  ///< 0 keeps the whole training split
  std::size_t test_subset = 0;
  std::size_t synthetic_train = 10000;
  std::size_t synthetic_test = 2000;
  std::uint64_t synthetic_seed = 2021;
  std::vector<float> mean;    ///< empty: format default
  std::vector<float> stddev;  ///< empty: format default
  bool flip = false;
  std::size_t pad = 0;
};

struct StageOneConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t random_paths = 2;
  double alpha = 0.999;
  double alpha_start = 0.99;
  double alpha_ramp = 0.05;
  std::string ablation = "ieb";
};

struct StageTwoConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double lr_decay = 0.9;
  double momentum = 0.9;
  double lambda_cls = 1.0;
  double lambda_cplx = 0.5;
  double lambda_sgs = 1.0;
  std::string strategy = "try-best";
  double tau = 1.0;
  bool gumbel_noise = true;
  /// Ratios the gates may choose from; empty allows every candidate.
  std::vector<double> restrict_ratios;
};

struct ExperimentConfig {
  std::string name = "dsnet";
  /// "residual" or "plain" presets, then overridden by `net`.
  std::string preset = "residual";
  SupernetConfig net = SupernetConfig::residual_analog();
  DataConfig data;
  StageOneConfig stage1;
  StageTwoConfig stage2;
  std::size_t recalibration_batches = 20;
  std::size_t eval_batch_size = 256;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/dsnet";

  void validate() const;
};

/// Parses a JSON config. Unknown keys and type mismatches raise ConfigError
/// naming the offending key; malformed text raises ConfigError with the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON text (stable key order) of a config.
std::string dump_config(const ExperimentConfig& config);
/// FNV-1a 64 over the canonical text of the fields that shape the network.
std::string network_hash(const SupernetConfig& config);

}  // namespace dsnet::experiment
