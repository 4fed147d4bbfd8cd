// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end for the experiment pipelines.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 I/O or format
// error, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dsnet/errors.hpp"
#include "dsnet/experiment/commands.hpp"
#include "dsnet/ops.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

struct Flags {
  std::string config;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> strategy;
  std::optional<std::string> ablation;
  std::string mode = "routed";
  std::size_t threads = 1;
  bool force = false;
  bool quiet = false;
};

dsnet::experiment::RunOptions options(const Flags& f) {
  dsnet::experiment::RunOptions o;
  o.seed = f.seed;
  o.out_dir = f.out;
  o.strategy = f.strategy;
  o.ablation = f.ablation;
  o.checkpoint = f.checkpoint;
  o.mode = f.mode;
  o.threads = f.threads;
  o.force = f.force;
  o.log = f.quiet ? nullptr : &std::cout;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  dsnet::configure_runtime();
  namespace ex = dsnet::experiment;

  CLI::App app{"Dynamic slimmable network training, evaluation and benchmarking"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&f](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", f.config, "Experiment config (JSON)");
    if (needs_config) c->required();
    sub->add_option("--seed", f.seed, "Override the config seed");
    sub->add_option("--out", f.out, "Override the output directory");
    sub->add_flag("--quiet", f.quiet, "Suppress progress output");
  };

  auto* train = app.add_subcommand("train-supernet", "Stage I: sandwich training with in-place distillation");
  add_common(train, true);
  train->add_option("--ablation", f.ablation, "Distillation target")->check(CLI::IsMember({"plain", "ema", "ieb"}));

  auto* recal = app.add_subcommand("recalibrate", "Recompute batch-norm statistics for every path");
  add_common(recal, true);
  recal->add_option("--checkpoint", f.checkpoint, "Supernet checkpoint (default: <out>/supernet.ckpt)");
  recal->add_flag("--force", f.force, "Accept a checkpoint written for another config");

  auto* gate = app.add_subcommand("train-gate", "Stage II: train the slimming gates on a frozen supernet");
  add_common(gate, true);
  gate->add_option("--checkpoint", f.checkpoint, "Supernet checkpoint (default: <out>/supernet.ckpt)");
  gate->add_option("--strategy", f.strategy, "Gate target for hard samples")
      ->check(CLI::IsMember({"try-best", "give-up"}));
  gate->add_option("--threads", f.threads, "Threads for routed evaluation")->check(CLI::PositiveNumber);
  gate->add_flag("--force", f.force, "Accept a checkpoint written for another config");

  auto* eval = app.add_subcommand("eval", "Fixed-path sweep or routed evaluation");
  add_common(eval, true);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint (default: gate.ckpt for routed, supernet.ckpt for sweep)");
  eval->add_option("--mode", f.mode, "routed or sweep");
  eval->add_option("--threads", f.threads, "Threads for routed evaluation")->check(CLI::PositiveNumber);
  eval->add_flag("--force", f.force, "Accept a checkpoint written for another config");

  auto* bench = app.add_subcommand("bench", "Channel-selection latency benchmark");
  bench->add_option("--config", f.config, "Bench spec (JSON)")->required();
  bench->add_option("--out", f.out, "Directory for bench.csv");
  bench->add_flag("--quiet", f.quiet, "Suppress the result table");

  auto* report = app.add_subcommand("report", "Summarize the metrics of an output directory");
  report->add_option("--out", f.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (bench->parsed()) {
      ex::bench(f.config, options(f));
    } else if (report->parsed()) {
      ex::report(*f.out, std::cout);
    } else {
      const ex::ExperimentConfig config = ex::load_config(f.config);
      const auto opts = options(f);
      if (train->parsed()) {
        const auto s = ex::train_supernet(config, opts);
        std::cout << "final loss " << s.final_loss << ", checkpoint " << s.checkpoint.string() << '\n';
      } else if (recal->parsed()) {
        ex::recalibrate(config, opts);
      } else if (gate->parsed()) {
        const auto s = ex::train_gate(config, opts);
        std::cout << "routed accuracy " << s.test_accuracy << ", mean MAdds " << s.mean_madds << ", checkpoint "
                  << s.checkpoint.string() << '\n';
      } else if (eval->parsed()) {
        ex::evaluate(config, opts);
      }
    }
  } catch (const dsnet::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const dsnet::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const dsnet::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const dsnet::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}
