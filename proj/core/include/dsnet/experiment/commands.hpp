// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dsnet/bench.hpp"
#include "dsnet/data.hpp"
#include "dsnet/experiment/config.hpp"

namespace dsnet::experiment {

/// Command-line overrides shared by every pipeline.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> strategy;
  std::optional<std::string> ablation;
  /// Input checkpoint; defaults to the pipeline's own file under out_dir.
  std::string checkpoint;
  std::string mode = "routed";
  /// Worker threads for routed evaluation only; training stays single-threaded.
  std::size_t threads = 1;
  /// Load checkpoints even when their config hash differs.
  bool force = false;
  /// Progress log; null silences it.
  std::ostream* log = nullptr;
};

/// The config with every override of `opts` applied and validated.
ExperimentConfig apply_overrides(ExperimentConfig config, const RunOptions& opts);

struct Splits {
  Dataset train;
  Dataset test;
};

/// Loads (and for the synthetic source first materializes) both splits, then
/// applies the configured subsets. Missing files raise IoError.
Splits load_splits(const ExperimentConfig& config);

/// Default file names under the output directory.
std::filesystem::path supernet_checkpoint(const ExperimentConfig& config);
std::filesystem::path gate_checkpoint(const ExperimentConfig& config);

struct SupernetSummary {
  std::size_t steps = 0;
  double final_loss = 0.0;
  double widest_accuracy = 0.0;
  double slimmest_accuracy = 0.0;
  std::filesystem::path checkpoint;
};

/// Stage I: sandwich training with the configured distillation ablation.
/// Writes train_steps.csv, epochs.csv, train_meta.json and the checkpoint.
SupernetSummary train_supernet(const ExperimentConfig& config, const RunOptions& opts);

/// Recomputes batch-norm statistics for every path and rewrites the
/// checkpoint. Returns the number of recalibrated paths, 0 for group norm.
std::size_t recalibrate(const ExperimentConfig& config, const RunOptions& opts);

struct GateSummary {
  double test_accuracy = 0.0;
  double mean_madds = 0.0;
  /// Fraction of Easy training samples routed to the slimmest allowed path.
  double easy_to_slimmest = 0.0;
  std::size_t easy_count = 0;
  /// [gated stage][candidate] fraction of held-out samples.
  std::vector<std::vector<double>> histogram;
  std::string supernet_hash_before;
  std::string supernet_hash_after;
  std::filesystem::path checkpoint;
};

/// Stage II: trains only the slimming heads on a frozen supernet. Writes
/// gate_steps.csv, gate_epochs.csv, gate_histogram.csv, gate_meta.json and
/// the gate checkpoint.
GateSummary train_gate(const ExperimentConfig& config, const RunOptions& opts);

struct SweepRow {
  std::string path;
  double madds = 0.0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::string mode;
  std::vector<SweepRow> sweep;
  double routed_accuracy = 0.0;
  double routed_madds = 0.0;
  std::vector<std::vector<double>> histogram;
};

/// "sweep" evaluates every fixed path (sweep.csv); "routed" evaluates gate
/// routing (routed.csv, histogram.csv). Other modes raise ConfigError.
EvalReport evaluate(const ExperimentConfig& config, const RunOptions& opts);

/// Bench spec file: JSON with optional "layers", "batch", "height", "width",
/// "rhos", "strategies", "warmup", "iterations", "repetitions" and "seed".
/// Unknown keys and malformed text raise ConfigError (with the line).
std::vector<BenchSpec> parse_bench_spec(const std::string& text);
std::vector<BenchResult> bench(const std::filesystem::path& spec_file, const RunOptions& opts);

/// Prints a summary of whatever metrics files exist under the output dir.
void report(const std::filesystem::path& out_dir, std::ostream& os);

}  // namespace dsnet::experiment
