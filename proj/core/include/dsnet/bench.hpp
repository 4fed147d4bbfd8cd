// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dsnet {

/// Channel-selection strategy executed by the latency benchmark.
enum class SelectStrategy {
  /// Every layer at full width regardless of rho.
  Full,
  /// Full-width convolution, then inactive output channels zeroed.
  Masking,
  /// Active input channels and filters gathered into fresh buffers, narrow
  /// convolution, result scattered back into the full-width layout.
  Indexing,
  /// Contiguous prefix view W[:k_out, :k_in] of the full weight.
  Slicing,
  /// Narrow weights materialized before timing starts.
  Ideal,
};

SelectStrategy parse_select_strategy(const std::string& name);
std::string select_strategy_name(SelectStrategy s);

struct BenchLayer {
  std::size_t in = 64;
  std::size_t out = 64;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
};

struct BenchSpec {
  std::vector<BenchLayer> layers;
  std::size_t batch = 8;
  std::size_t height = 28;
  std::size_t width = 28;
  double rho = 1.0;
  SelectStrategy strategy = SelectStrategy::Full;
  std::size_t warmup = 3;
  std::size_t iterations = 10;
  std::size_t repetitions = 5;
  std::uint64_t seed = 7;

  /// 8 conv layers, 64 channels, 28x28, batch 8.
  static BenchSpec default_stack();
  /// ConfigError for impossible shapes or too few iterations.
  void validate() const;
  /// Active output channels of layer `i` at rho.
  std::size_t active(std::size_t i) const;
};

struct BenchResult {
  SelectStrategy strategy = SelectStrategy::Full;
  double rho = 1.0;
  std::vector<double> repetition_ms;  ///< mean latency of each repetition
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  /// Sum of the active prefix channels of the final output.
  double checksum = 0.0;
};

/// Times one spec. The checksum is computed outside the timed region.
BenchResult run_bench(const BenchSpec& spec);
/// Times several specs together: within each repetition the specs run
/// round-robin, one forward each, so slow drift in machine speed is shared
/// rather than attributed to whichever spec ran during it. All specs must use
/// the same warmup, iteration and repetition counts.
std::vector<BenchResult> run_bench_group(const std::vector<BenchSpec>& specs);

/// Median and interquartile range with linear interpolation between order statistics.
double median(std::vector<double> v);
double interquartile_range(std::vector<double> v);

struct ReportRow {
  std::string strategy;
  double rho = 0.0;
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  double speedup_vs_full = 0.0;
  double checksum = 0.0;
};

/// Rows with speedup relative to the full-strategy result at the same rho
/// (0 if no full result is present).
std::vector<ReportRow> report_rows(const std::vector<BenchResult>& results);
/// Writes the CSV report. Values are printed with round-trip precision.
void emit_report(const std::filesystem::path& path, const std::vector<BenchResult>& results);
void print_table(std::ostream& os, const std::vector<BenchResult>& results);
std::vector<ReportRow> parse_report(const std::filesystem::path& path);

}  // namespace dsnet
