// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "dsnet/errors.hpp"
#include "dsnet/ops.hpp"
#include "dsnet/random.hpp"

namespace dsnet {

SelectStrategy parse_select_strategy(const std::string& name) {
  if (name == "full") return SelectStrategy::Full;
  if (name == "masking") return SelectStrategy::Masking;
  if (name == "indexing") return SelectStrategy::Indexing;
  if (name == "slicing") return SelectStrategy::Slicing;
  if (name == "ideal") return SelectStrategy::Ideal;
  throw ConfigError("unknown strategy '" + name + "'");
}

std::string select_strategy_name(SelectStrategy s) {
  switch (s) {
    case SelectStrategy::Full:
      return "full";
    case SelectStrategy::Masking:
      return "masking";
    case SelectStrategy::Indexing:
      return "indexing";
    case SelectStrategy::Slicing:
      return "slicing";
    case SelectStrategy::Ideal:
      return "ideal";
  }
  return "?";
}

BenchSpec BenchSpec::default_stack() {
  BenchSpec s;
  s.layers.assign(8, BenchLayer{});
  return s;
}

std::size_t BenchSpec::active(std::size_t i) const {
  const double exact = rho * static_cast<double>(layers.at(i).out);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact + 0.5)));
}

void BenchSpec::validate() const {
  if (layers.empty()) throw ConfigError("bench stack has no layers");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
  if (iterations < 10) throw ConfigError("timed iterations must be at least 10");
  if (warmup < 3) throw ConfigError("warmup iterations must be at least 3");
  if (repetitions < 1 || batch < 1) throw ConfigError("need at least one repetition and one sample");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const BenchLayer& l = layers[i];
    if (l.in == 0 || l.out == 0 || l.kernel == 0 || l.stride == 0) throw ConfigError("bench layer with zero extent");
    if (i > 0 && l.in != layers[i - 1].out) {
      throw ConfigError("layer " + std::to_string(i) + " input " + std::to_string(l.in) + " does not match previous output");
    }
    try {
      h = conv_out_extent(h, l.kernel, {l.stride, l.pad});
      w = conv_out_extent(w, l.kernel, {l.stride, l.pad});
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("unachievable bench shape: ") + e.what());
    }
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(sorted.size() - 1, lo + 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

void relu_inplace(Tensor& t) {
  for (float& v : t.values()) v = v > 0.0f ? v : 0.0f;
}

// Copies channels [0, k) of an NCHW tensor into a compact [N, k, H, W] buffer.
Tensor gather_channels(const Tensor& x, std::size_t k) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, k, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < k; ++ch) {
      std::memcpy(out.data() + (i * k + ch) * plane, x.data() + (i * c + ch) * plane, plane * sizeof(float));
    }
  }
  return out;
}

// Writes a compact [N, k, H, W] result into a zeroed [N, c, H, W] buffer.
Tensor scatter_channels(const Tensor& y, std::size_t c) {
  const std::size_t n = y.dim(0), k = y.dim(1), plane = y.dim(2) * y.dim(3);
  Tensor out(Shape{n, c, y.dim(2), y.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < k; ++ch) {
      std::memcpy(out.data() + (i * c + ch) * plane, y.data() + (i * k + ch) * plane, plane * sizeof(float));
    }
  }
  return out;
}

struct Stack {
  const BenchSpec* spec;
  std::vector<Tensor> weights;  // full OIkk
  std::vector<Tensor> narrow;   // pre-materialized for the ideal strategy
  std::vector<std::size_t> in_active, out_active;
  Tensor input;
};

Tensor run_once(const Stack& s, SelectStrategy strategy) {
  const BenchSpec& spec = *s.spec;
  Tensor h = s.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const BenchLayer& l = spec.layers[i];
    const ConvGeometry geom{l.stride, l.pad};
    const Tensor& w = s.weights[i];
    const std::size_t kin = s.in_active[i], kout = s.out_active[i];
    switch (strategy) {
      case SelectStrategy::Full:
        h = conv2d(h, w, geom);
        break;
      case SelectStrategy::Masking:
        h = conv2d_masked(h, w, kout, geom);
        break;
      case SelectStrategy::Indexing: {
        // Channel indices are data in general, so every selection is a copy.
        Tensor xin = gather_channels(h, kin);
        const std::size_t filter = l.kernel * l.kernel;
        Tensor wsel(Shape{kout, kin, l.kernel, l.kernel});
        for (std::size_t o = 0; o < kout; ++o) {
          for (std::size_t c = 0; c < kin; ++c) {
            std::memcpy(wsel.data() + (o * kin + c) * filter, w.data() + (o * l.in + c) * filter, filter * sizeof(float));
          }
        }
        h = scatter_channels(conv2d(xin, wsel, geom), l.out);
        break;
      }
      case SelectStrategy::Slicing:
        h = conv2d_block(h, weight_block(w, kout, kin), l.kernel, geom);
        break;
      case SelectStrategy::Ideal:
        h = conv2d(h, s.narrow[i], geom);
        break;
    }
    relu_inplace(h);
  }
  return h;
}

double prefix_checksum(const Tensor& y, std::size_t k) {
  const std::size_t n = y.dim(0), c = y.dim(1), plane = y.dim(2) * y.dim(3);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < std::min(k, c); ++ch) {
      const float* p = y.data() + (i * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) sum += p[q];
    }
  }
  return sum;
}

}  // namespace

double interquartile_range(std::vector<double> v) {
  if (v.size() < 2) return 0.0;
  std::sort(v.begin(), v.end());
  return quantile(v, 0.75) - quantile(v, 0.25);
}

namespace {

Stack prepare(const BenchSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Stack s;
  s.spec = &spec;
  const bool full = spec.strategy == SelectStrategy::Full;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const BenchLayer& l = spec.layers[i];
    s.weights.push_back(rng.normal_tensor(Shape{l.out, l.in, l.kernel, l.kernel},
                                          std::sqrt(2.0 / static_cast<double>(l.in * l.kernel * l.kernel))));
    // The first layer reads the full-width stage input.
    s.in_active.push_back(full || i == 0 ? l.in : s.out_active.back());
    s.out_active.push_back(full ? l.out : spec.active(i));
  }
  if (spec.strategy == SelectStrategy::Ideal) {
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const BenchLayer& l = spec.layers[i];
      Tensor narrow(Shape{s.out_active[i], s.in_active[i], l.kernel, l.kernel});
      const MatrixView b = weight_block(s.weights[i], s.out_active[i], s.in_active[i]);
      for (std::size_t o = 0; o < b.rows; ++o) std::memcpy(narrow.data() + o * b.cols, b.data + o * b.ld, b.cols * sizeof(float));
      s.narrow.push_back(std::move(narrow));
    }
  }
  s.input = rng.normal_tensor(Shape{spec.batch, spec.layers.front().in, spec.height, spec.width}, 1.0);
  return s;
}

}  // namespace

BenchResult run_bench(const BenchSpec& spec) { return run_bench_group({spec}).front(); }

std::vector<BenchResult> run_bench_group(const std::vector<BenchSpec>& specs) {
  if (specs.empty()) return {};
  const BenchSpec& first = specs.front();
  for (const BenchSpec& s : specs) {
    if (s.warmup != first.warmup || s.iterations != first.iterations || s.repetitions != first.repetitions) {
      throw ConfigError("grouped bench specs must share warmup, iterations and repetitions");
    }
  }
  set_single_threaded_kernels();
  std::vector<Stack> stacks;
  stacks.reserve(specs.size());
  for (const BenchSpec& spec : specs) stacks.push_back(prepare(spec));

  std::vector<BenchResult> results(specs.size());
  std::vector<double> checksum(specs.size(), 0.0);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    results[k].strategy = specs[k].strategy;
    results[k].rho = specs[k].rho;
  }
  using clock = std::chrono::steady_clock;
  for (std::size_t r = 0; r < first.repetitions; ++r) {
    for (std::size_t i = 0; i < first.warmup; ++i) {
      for (std::size_t k = 0; k < specs.size(); ++k) {
        checksum[k] = prefix_checksum(run_once(stacks[k], specs[k].strategy), stacks[k].out_active.back());
      }
    }
    // Round-robin over the specs so drift in machine speed hits all of them
    // alike; the starting spec rotates so none always follows the same one.
    std::vector<clock::duration> spent(specs.size(), clock::duration::zero());
    for (std::size_t i = 0; i < first.iterations; ++i) {
      for (std::size_t j = 0; j < specs.size(); ++j) {
        const std::size_t k = (i + j) % specs.size();
        const auto t0 = clock::now();
        Tensor y = run_once(stacks[k], specs[k].strategy);
        spent[k] += clock::now() - t0;
        checksum[k] = prefix_checksum(y, stacks[k].out_active.back());
      }
    }
    for (std::size_t k = 0; k < specs.size(); ++k) {
      const double ms = std::chrono::duration<double, std::milli>(spent[k]).count();
      results[k].repetition_ms.push_back(ms / static_cast<double>(first.iterations));
    }
  }
  for (std::size_t k = 0; k < specs.size(); ++k) {
    results[k].median_ms = median(results[k].repetition_ms);
    results[k].iqr_ms = interquartile_range(results[k].repetition_ms);
    results[k].checksum = checksum[k];
  }
  return results;
}

std::vector<ReportRow> report_rows(const std::vector<BenchResult>& results) {
  std::map<double, double> full_median;
  for (const BenchResult& r : results) {
    if (r.strategy == SelectStrategy::Full) full_median[r.rho] = r.median_ms;
  }
  std::vector<ReportRow> rows;
  for (const BenchResult& r : results) {
    ReportRow row{select_strategy_name(r.strategy), r.rho, r.median_ms, r.iqr_ms, 0.0, r.checksum};
    auto it = full_median.find(r.rho);
    if (it != full_median.end() && r.median_ms > 0.0) row.speedup_vs_full = it->second / r.median_ms;
    rows.push_back(row);
  }
  return rows;
}

void emit_report(const std::filesystem::path& path, const std::vector<BenchResult>& results) {
  if (results.empty()) throw ContractError("report needs at least one result");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "strategy,rho,median_ms,iqr_ms,speedup_vs_full,checksum\n";
  out << std::setprecision(17);
  for (const ReportRow& r : report_rows(results)) {
    out << r.strategy << ',' << r.rho << ',' << r.median_ms << ',' << r.iqr_ms << ',' << r.speedup_vs_full << ','
        << r.checksum << '\n';
  }
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

void print_table(std::ostream& os, const std::vector<BenchResult>& results) {
  os << std::left << std::setw(10) << "strategy" << std::right << std::setw(7) << "rho" << std::setw(12) << "median_ms"
     << std::setw(10) << "iqr_ms" << std::setw(10) << "speedup" << std::setw(16) << "checksum" << '\n';
  for (const ReportRow& r : report_rows(results)) {
    os << std::left << std::setw(10) << r.strategy << std::right << std::fixed << std::setprecision(3) << std::setw(7)
       << r.rho << std::setw(12) << r.median_ms << std::setw(10) << r.iqr_ms << std::setprecision(2) << std::setw(10)
       << r.speedup_vs_full << std::setprecision(4) << std::setw(16) << r.checksum << '\n';
    os.unsetf(std::ios::fixed);
  }
}

std::vector<ReportRow> parse_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || line != "strategy,rho,median_ms,iqr_ms,speedup_vs_full,checksum") {
    throw FormatError("unexpected report header", 0);
  }
  offset += line.size() + 1;
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw FormatError("report row needs 6 fields", offset);
    try {
      rows.push_back({cells[0], std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4]),
                      std::stod(cells[5])});
    } catch (const std::logic_error&) {
      throw FormatError("non-numeric report field", offset);
    }
    offset += line.size() + 1;
  }
  return rows;
}

}  // namespace dsnet
