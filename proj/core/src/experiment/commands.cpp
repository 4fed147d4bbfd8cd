// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/experiment/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsnet/errors.hpp"
#include "dsnet/experiment/checkpoint.hpp"
#include "dsnet/experiment/metrics.hpp"
#include "dsnet/ops.hpp"
#include "dsnet/optim.hpp"
#include "dsnet/train_ieb.hpp"
#include "dsnet/train_sgs.hpp"

namespace dsnet::experiment {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Independent streams derived from the run seed.
std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kInit = 1, kSandwich = 2, kStageOneOrder = 3, kGateNoise = 4, kGateOrder = 5, kRecal = 6 };

void say(const RunOptions& opts, const std::string& line) {
  if (opts.log) *opts.log << line << '\n' << std::flush;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// Group norm has no recorded statistics, so both regimes coincide for it.
NormRegime eval_regime(const SupernetConfig& c) {
  return c.norm == NormKind::BatchNorm ? NormRegime::Recorded : NormRegime::Batch;
}

template <typename Fn>
void for_chunks(const Dataset& ds, std::size_t batch, Fn&& fn) {
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch) {
    const std::size_t end = std::min(ds.size(), begin + batch);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    fn(gather(ds, idx), begin);
  }
}

double accuracy_at(Supernet& net, const Dataset& ds, const PathDescriptor& path, NormRegime regime,
                   std::size_t batch) {
  std::size_t correct = 0;
  for_chunks(ds, batch, [&](const Batch& b, std::size_t) {
    ad::Tape tape(false);
    const auto pred = argmax_rows(net.forward_at_path(tape, tape.constant(b.images), path, regime).value());
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  });
  return ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

struct RoutedPass {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> choice;  // [stage][sample]
  std::vector<int> predictions;
};

RoutedPass routed_pass(Supernet& net, const Dataset& ds, std::size_t batch, std::size_t threads) {
  RoutedPass out;
  const std::size_t stages = net.config().gated_stages().size();
  out.choice.assign(stages, {});
  std::size_t correct = 0;
  for_chunks(ds, batch, [&](const Batch& b, std::size_t) {
    Supernet::Routed r = net.forward_routed(b.images, eval_regime(net.config()), nullptr, threads);
    const auto pred = argmax_rows(r.logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
    out.predictions.insert(out.predictions.end(), pred.begin(), pred.end());
    for (std::size_t s = 0; s < stages; ++s) out.choice[s].insert(out.choice[s].end(), r.choice[s].begin(), r.choice[s].end());
  });
  out.accuracy = ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
  return out;
}

std::vector<std::vector<double>> histogram(const SupernetConfig& config,
                                           const std::vector<std::vector<std::size_t>>& choice) {
  const auto gated = config.gated_stages();
  std::vector<std::vector<double>> h(gated.size());
  for (std::size_t s = 0; s < gated.size(); ++s) {
    h[s].assign(config.stages[gated[s]].candidates.size(), 0.0);
    for (std::size_t c : choice[s]) h[s].at(c) += 1.0;
    const double n = static_cast<double>(choice[s].size());
    if (n > 0) {
      for (double& v : h[s]) v /= n;
    }
  }
  return h;
}

void write_histogram(const fs::path& path, const SupernetConfig& config, const std::vector<std::vector<double>>& h) {
  CsvLog log(path, {"stage", "candidate", "ratio", "fraction"});
  const auto gated = config.gated_stages();
  for (std::size_t s = 0; s < h.size(); ++s) {
    for (std::size_t c = 0; c < h[s].size(); ++c) {
      log.row({CsvLog::num(gated[s]), CsvLog::num(c), CsvLog::num(config.stages[gated[s]].candidates[c]),
               CsvLog::num(h[s][c])});
    }
  }
}

std::vector<ad::Parameter*> frozen_parameters(Supernet& net) {
  std::vector<ad::Parameter*> all = net.parameters();
  const std::vector<ad::Parameter*> slim = net.slimming_parameters();
  std::erase_if(all, [&](ad::Parameter* p) { return std::find(slim.begin(), slim.end(), p) != slim.end(); });
  return all;
}

fs::path input_checkpoint(const RunOptions& opts, const fs::path& fallback) {
  const fs::path p = opts.checkpoint.empty() ? fallback : fs::path(opts.checkpoint);
  if (!fs::exists(p)) throw IoError("checkpoint " + p.string() + " does not exist");
  return p;
}

Normalization normalization(const ExperimentConfig& config) {
  if (!config.data.mean.empty()) return {config.data.mean, config.data.stddev};
  if (config.data.source == "idx") return Normalization::identity(config.net.in_channels);
  return Normalization::cifar10();
}

fs::path synthetic_dir(const ExperimentConfig& config) {
  if (!config.data.dir.empty()) return config.data.dir;
  return fs::path(config.out_dir) / "data";
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) line += text[i] == '\n';
  return line;
}

}  // namespace

ExperimentConfig apply_overrides(ExperimentConfig config, const RunOptions& opts) {
  if (opts.seed) config.seed = *opts.seed;
  if (opts.out_dir) config.out_dir = *opts.out_dir;
  if (opts.strategy) config.stage2.strategy = *opts.strategy;
  if (opts.ablation) config.stage1.ablation = *opts.ablation;
  if (opts.threads == 0) throw ConfigError("--threads must be at least 1");
  config.validate();
  return config;
}

Splits load_splits(const ExperimentConfig& config) {
  const DataConfig& d = config.data;
  const Normalization norm = normalization(config);
  Splits s;
  if (d.source == "idx") {
    s.train = load_idx(d.train_images, d.train_labels, norm, config.net.classes);
    s.test = load_idx(d.test_images, d.test_labels, norm, config.net.classes);
  } else {
    fs::path dir = d.dir;
    if (d.source == "synthetic") {
      dir = synthetic_dir(config);
      // Regenerated only when the recorded parameters differ.
      const fs::path stamp = dir / "synthetic.json";
      ordered_json want;
      want["train"] = d.synthetic_train;
      want["test"] = d.synthetic_test;
      want["seed"] = d.synthetic_seed;
      want["generator"] = kSyntheticGeneratorVersion;
      bool fresh = false;
      if (std::ifstream in(stamp); in) {
        std::stringstream ss;
        ss << in.rdbuf();
        fresh = ss.str() == want.dump();
      }
      if (!fresh) {
        write_synthetic_cifar(dir, d.synthetic_train, d.synthetic_test, d.synthetic_seed);
        write_sidecar(stamp, want.dump());
      }
    } else if (dir.empty()) {
      throw ConfigError("data.dir is required for the cifar source");
    }
    if (!fs::exists(dir / "test_batch.bin")) throw IoError("no CIFAR batches under " + dir.string());
    s.train = load_cifar_binary(dir, "train", norm);
    s.test = load_cifar_binary(dir, "test", norm);
  }
  if (s.train.images.dim(1) != config.net.in_channels || s.train.images.dim(2) != config.net.height ||
      s.train.images.dim(3) != config.net.width) {
    throw ConfigError("dataset images " + shape_str(s.train.images.shape()) + " do not match the network input");
  }
  if (d.train_subset && d.train_subset < s.train.size()) {
    s.train = stratified_subset(s.train, d.train_subset, d.synthetic_seed);
  }
  if (d.test_subset && d.test_subset < s.test.size()) s.test = stratified_subset(s.test, d.test_subset, d.synthetic_seed);
  return s;
}

fs::path supernet_checkpoint(const ExperimentConfig& config) { return fs::path(config.out_dir) / "supernet.ckpt"; }
fs::path gate_checkpoint(const ExperimentConfig& config) { return fs::path(config.out_dir) / "gate.ckpt"; }

SupernetSummary train_supernet(const ExperimentConfig& base, const RunOptions& opts) {
  const ExperimentConfig config = apply_overrides(base, opts);
  const Splits data = load_splits(config);
  const fs::path out = config.out_dir;
  const std::string hash = network_hash(config.net);

  IebConfig ieb{config.stage1.random_paths, config.stage1.alpha, config.stage1.alpha_start, config.stage1.alpha_ramp,
                parse_ablation(config.stage1.ablation)};
  Supernet net(config.net, derive(config.seed, kInit));
  net.set_training_stage(TrainingStage::SupernetTraining);
  std::optional<EmaState> ema;
  if (ieb.ablation != Ablation::Plain) ema.emplace(net);
  Sgd opt(config.stage1.momentum, config.stage1.weight_decay);
  Rng sandwich(derive(config.seed, kSandwich));

  const Augment augment{config.data.flip, config.data.pad};
  const std::size_t per_epoch = (data.train.size() + config.stage1.batch_size - 1) / config.stage1.batch_size;
  const std::size_t total = per_epoch * config.stage1.epochs;

  ordered_json meta;
  meta["command"] = "train-supernet";
  meta["ablation"] = ablation_name(ieb.ablation);
  meta["seed"] = config.seed;
  meta["config_hash"] = hash;
  meta["train_samples"] = data.train.size();
  meta["test_samples"] = data.test.size();
  meta["steps_planned"] = total;
  meta["widest_madds"] = count_madds(config.net, widest_path(config.net));
  meta["slimmest_madds"] = count_madds(config.net, slimmest_path(config.net));
  meta["config"] = ordered_json::parse(dump_config(config));
  write_sidecar(out / "train_meta.json", meta.dump(2) + "\n");

  CsvLog steps(out / "train_steps.csv",
               {"epoch", "step", "lr", "alpha", "loss_widest", "loss_random", "loss_slimmest", "loss_total"});
  CsvLog epochs(out / "epochs.csv", {"epoch", "mean_loss", "widest_accuracy", "slimmest_accuracy", "seconds"});

  SupernetSummary summary;
  std::size_t step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < config.stage1.epochs; ++epoch) {
    BatchIterator it(data.train, config.stage1.batch_size, derive(config.seed, kStageOneOrder) + epoch, true, augment);
    Batch batch;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    while (it.next(batch)) {
      const double lr = cosine_lr(config.stage1.lr, step, total);
      const double alpha = ema_alpha(ieb, step, total);
      const IebReport r =
          ieb_step(net, ema ? &*ema : nullptr, batch.images, batch.labels, sandwich, ieb, opt, lr, alpha);
      steps.row({CsvLog::num(epoch), CsvLog::num(step), CsvLog::num(lr), CsvLog::num(alpha), CsvLog::num(r.widest),
                 CsvLog::num(r.random), CsvLog::num(r.slimmest), CsvLog::num(r.total)});
      summary.final_loss = r.total;
      loss_sum += r.total;
      ++batches;
      ++step;
    }
    const NormRegime regime = NormRegime::Batch;
    summary.widest_accuracy = accuracy_at(net, data.test, widest_path(config.net), regime, config.eval_batch_size);
    summary.slimmest_accuracy =
        accuracy_at(net, data.test, slimmest_path(config.net), regime, config.eval_batch_size);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    epochs.row({CsvLog::num(epoch), CsvLog::num(loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1))),
                CsvLog::num(summary.widest_accuracy), CsvLog::num(summary.slimmest_accuracy), CsvLog::num(secs)});
    say(opts, "epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.stage1.epochs) + " loss " +
                  fixed(loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1))) + " widest " +
                  fixed(summary.widest_accuracy) + " slimmest " + fixed(summary.slimmest_accuracy) + " (" +
                  fixed(secs, 1) + "s)");
  }
  summary.steps = step;
  summary.checkpoint = supernet_checkpoint(config);
  save_checkpoint(summary.checkpoint, capture(net, ema ? &*ema : nullptr, &opt, hash, step, "supernet"));
  meta["steps"] = step;
  meta["final_loss"] = summary.final_loss;
  meta["widest_accuracy"] = summary.widest_accuracy;
  meta["slimmest_accuracy"] = summary.slimmest_accuracy;
  write_sidecar(out / "train_meta.json", meta.dump(2) + "\n");
  return summary;
}

std::size_t recalibrate(const ExperimentConfig& base, const RunOptions& opts) {
  const ExperimentConfig config = apply_overrides(base, opts);
  const fs::path in = input_checkpoint(opts, supernet_checkpoint(config));
  if (config.net.norm != NormKind::BatchNorm) {
    say(opts, "group-norm network: statistics are computed per sample group, nothing to recalibrate");
    return 0;
  }
  const std::string hash = network_hash(config.net);
  const Checkpoint ckpt = read_checkpoint(in);
  Supernet net(config.net, 0);
  std::optional<EmaState> ema;
  if (ckpt.tensors.count("ema/" + net.parameters().front()->name)) ema.emplace(net);
  restore(ckpt, net, ema ? &*ema : nullptr, nullptr, hash, opts.force);

  const Splits data = load_splits(config);
  const auto paths = all_paths(config.net);
  for (const PathDescriptor& path : paths) {
    BatchIterator it(data.train, config.stage1.batch_size, derive(config.seed, kRecal), true);
    std::size_t left = config.recalibration_batches;
    Batch batch;
    net.recalibrate(path, [&](Tensor& x) {
      if (left == 0 || !it.next(batch)) return false;
      --left;
      x = batch.images;
      return true;
    });
  }
  Checkpoint outc = capture(net, ema ? &*ema : nullptr, nullptr, hash, ckpt.step, "recalibrated");
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.starts_with("velocity/")) outc.tensors.emplace(name, t);
  }
  const fs::path target = opts.checkpoint.empty() ? supernet_checkpoint(config) : fs::path(opts.checkpoint);
  save_checkpoint(target, outc);
  say(opts, "recalibrated " + std::to_string(paths.size()) + " paths over " +
                std::to_string(config.recalibration_batches) + " batches each");
  return paths.size();
}

GateSummary train_gate(const ExperimentConfig& base, const RunOptions& opts) {
  const ExperimentConfig config = apply_overrides(base, opts);
  const fs::path in = input_checkpoint(opts, supernet_checkpoint(config));
  const std::string hash = network_hash(config.net);
  const fs::path out = config.out_dir;

  Supernet net(config.net, 0);
  restore(read_checkpoint(in), net, nullptr, nullptr, hash, opts.force);
  net.set_training_stage(TrainingStage::GateTraining);
  net.restrict_candidates(config.stage2.restrict_ratios);
  const NormRegime regime = eval_regime(config.net);

  const Splits data = load_splits(config);
  std::vector<Difficulty> difficulty;
  difficulty.reserve(data.train.size());
  for_chunks(data.train, config.eval_batch_size, [&](const Batch& b, std::size_t) {
    const auto d = label_difficulty(net, b.images, b.labels, regime);
    difficulty.insert(difficulty.end(), d.begin(), d.end());
  });
  std::size_t counts[3] = {0, 0, 0};
  for (Difficulty d : difficulty) ++counts[static_cast<int>(d)];

  GateSummary summary;
  summary.supernet_hash_before = parameter_hash(frozen_parameters(net));

  SgsConfig sgs{config.stage2.lambda_cls, config.stage2.lambda_cplx, config.stage2.lambda_sgs,
                parse_strategy(config.stage2.strategy), static_cast<float>(config.stage2.tau),
                config.stage2.gumbel_noise};
  Sgd opt(config.stage2.momentum, 0.0);
  Rng noise(derive(config.seed, kGateNoise));

  ordered_json meta;
  meta["command"] = "train-gate";
  meta["strategy"] = strategy_name(sgs.strategy);
  meta["lambda"] = {sgs.lambda_cls, sgs.lambda_cplx, sgs.lambda_sgs};
  meta["restrict_ratios"] = config.stage2.restrict_ratios;
  meta["seed"] = config.seed;
  meta["config_hash"] = hash;
  meta["source_checkpoint"] = in.string();
  meta["difficulty"] = {{"easy", counts[0]}, {"hard", counts[1]}, {"dependent", counts[2]}};
  meta["config"] = ordered_json::parse(dump_config(config));
  write_sidecar(out / "gate_meta.json", meta.dump(2) + "\n");

  CsvLog steps(out / "gate_steps.csv", {"epoch", "step", "lr", "loss_cls", "loss_cplx", "loss_sgs", "loss_total",
                                        "mean_madds"});
  CsvLog epochs(out / "gate_epochs.csv", {"epoch", "test_accuracy", "mean_madds", "seconds"});

  std::size_t step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  RoutedPass test;
  for (std::size_t epoch = 0; epoch < config.stage2.epochs; ++epoch) {
    const double lr = config.stage2.lr * std::pow(config.stage2.lr_decay, static_cast<double>(epoch));
    BatchIterator it(data.train, config.stage2.batch_size, derive(config.seed, kGateOrder) + epoch, true);
    Batch batch;
    while (it.next(batch)) {
      std::vector<Difficulty> d;
      d.reserve(batch.indices.size());
      for (std::size_t i : batch.indices) d.push_back(difficulty[i]);
      const GateReport r = joint_gate_step(net, batch.images, batch.labels, d, sgs, opt, lr, noise, regime);
      steps.row({CsvLog::num(epoch), CsvLog::num(step), CsvLog::num(lr), CsvLog::num(r.cls), CsvLog::num(r.cplx),
                 CsvLog::num(r.sgs), CsvLog::num(r.total), CsvLog::num(r.mean_madds)});
      ++step;
    }
    test = routed_pass(net, data.test, config.eval_batch_size, opts.threads);
    summary.test_accuracy = test.accuracy;
    summary.mean_madds = mean_routed_madds(config.net, test.choice);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    epochs.row({CsvLog::num(epoch), CsvLog::num(summary.test_accuracy), CsvLog::num(summary.mean_madds),
                CsvLog::num(secs)});
    say(opts, "gate epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.stage2.epochs) +
                  " routed accuracy " + fixed(summary.test_accuracy) + " mean MAdds " + fixed(summary.mean_madds, 0));
  }
  if (config.stage2.epochs == 0) {
    test = routed_pass(net, data.test, config.eval_batch_size, opts.threads);
    summary.test_accuracy = test.accuracy;
    summary.mean_madds = mean_routed_madds(config.net, test.choice);
  }
  summary.histogram = histogram(config.net, test.choice);
  write_histogram(out / "gate_histogram.csv", config.net, summary.histogram);

  // Easy training samples that the trained gates send down the slimmest allowed path.
  const RoutedPass train = routed_pass(net, data.train, config.eval_batch_size, opts.threads);
  std::vector<std::size_t> lowest;
  for (std::size_t s = 0; s < train.choice.size(); ++s) lowest.push_back(net.slimming_gate(s).allowed_bounds().first);
  std::size_t easy_slim = 0;
  for (std::size_t i = 0; i < difficulty.size(); ++i) {
    if (difficulty[i] != Difficulty::Easy) continue;
    ++summary.easy_count;
    bool slim = true;
    for (std::size_t s = 0; s < train.choice.size(); ++s) slim = slim && train.choice[s][i] == lowest[s];
    easy_slim += slim;
  }
  summary.easy_to_slimmest =
      summary.easy_count ? static_cast<double>(easy_slim) / static_cast<double>(summary.easy_count) : 0.0;

  summary.supernet_hash_after = parameter_hash(frozen_parameters(net));
  summary.checkpoint = gate_checkpoint(config);
  save_checkpoint(summary.checkpoint, capture(net, nullptr, nullptr, hash, step, "gate"));

  meta["steps"] = step;
  meta["test_accuracy"] = summary.test_accuracy;
  meta["mean_madds"] = summary.mean_madds;
  meta["easy_to_slimmest"] = summary.easy_to_slimmest;
  meta["supernet_hash_before"] = summary.supernet_hash_before;
  meta["supernet_hash_after"] = summary.supernet_hash_after;
  write_sidecar(out / "gate_meta.json", meta.dump(2) + "\n");
  return summary;
}

EvalReport evaluate(const ExperimentConfig& base, const RunOptions& opts) {
  if (opts.mode != "routed" && opts.mode != "sweep") {
    throw ConfigError("unknown eval mode '" + opts.mode + "' (expected routed or sweep)");
  }
  const ExperimentConfig config = apply_overrides(base, opts);
  const fs::path fallback = opts.mode == "routed" ? gate_checkpoint(config) : supernet_checkpoint(config);
  const fs::path in = input_checkpoint(opts, fallback);
  Supernet net(config.net, 0);
  restore(read_checkpoint(in), net, nullptr, nullptr, network_hash(config.net), opts.force);
  const Splits data = load_splits(config);
  const fs::path out = config.out_dir;

  EvalReport report;
  report.mode = opts.mode;
  if (opts.mode == "sweep") {
    CsvLog log(out / "sweep.csv", {"path", "madds", "accuracy"});
    for (const PathDescriptor& path : all_paths(config.net)) {
      SweepRow row{path.str(), static_cast<double>(count_madds(config.net, path)),
                   accuracy_at(net, data.test, path, eval_regime(config.net), config.eval_batch_size)};
      log.row({row.path, CsvLog::num(row.madds), CsvLog::num(row.accuracy)});
      report.sweep.push_back(row);
    }
    say(opts, "swept " + std::to_string(report.sweep.size()) + " paths");
  } else {
    net.restrict_candidates(config.stage2.restrict_ratios);
    const RoutedPass pass = routed_pass(net, data.test, config.eval_batch_size, opts.threads);
    report.routed_accuracy = pass.accuracy;
    report.routed_madds = mean_routed_madds(config.net, pass.choice);
    report.histogram = histogram(config.net, pass.choice);
    CsvLog log(out / "routed.csv", {"accuracy", "mean_madds", "samples"});
    log.row({CsvLog::num(report.routed_accuracy), CsvLog::num(report.routed_madds), CsvLog::num(data.test.size())});
    write_histogram(out / "histogram.csv", config.net, report.histogram);
    say(opts, "routed accuracy " + fixed(report.routed_accuracy) + " mean MAdds " + fixed(report.routed_madds, 0));
  }
  return report;
}

std::vector<BenchSpec> parse_bench_spec(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("bench spec parse error at line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("bench spec must be an object");
  static const std::vector<std::string> known{"layers", "batch", "height", "width", "rhos", "strategies",
                                              "warmup", "iterations", "repetitions", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown bench spec key '" + it.key() + "'");
    }
  }
  BenchSpec base = BenchSpec::default_stack();
  std::vector<double> rhos{0.25, 0.5, 0.75, 1.0};
  std::vector<std::string> strategies{"full", "masking", "indexing", "slicing", "ideal"};
  try {
    if (j.contains("layers")) {
      base.layers.clear();
      for (const json& l : j.at("layers")) {
        BenchLayer layer;
        for (auto it = l.begin(); it != l.end(); ++it) {
          const std::string& k = it.key();
          if (k == "in") layer.in = it->get<std::size_t>();
          else if (k == "out") layer.out = it->get<std::size_t>();
          else if (k == "kernel") layer.kernel = it->get<std::size_t>();
          else if (k == "stride") layer.stride = it->get<std::size_t>();
          else if (k == "pad") layer.pad = it->get<std::size_t>();
          else throw ConfigError("unknown bench layer key '" + k + "'");
        }
        base.layers.push_back(layer);
      }
    }
    if (j.contains("batch")) base.batch = j["batch"].get<std::size_t>();
    if (j.contains("height")) base.height = j["height"].get<std::size_t>();
    if (j.contains("width")) base.width = j["width"].get<std::size_t>();
    if (j.contains("warmup")) base.warmup = j["warmup"].get<std::size_t>();
    if (j.contains("iterations")) base.iterations = j["iterations"].get<std::size_t>();
    if (j.contains("repetitions")) base.repetitions = j["repetitions"].get<std::size_t>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("rhos")) rhos = j["rhos"].get<std::vector<double>>();
    if (j.contains("strategies")) strategies = j["strategies"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bench spec: ") + e.what());
  }
  std::vector<BenchSpec> specs;
  for (double rho : rhos) {
    for (const std::string& s : strategies) {
      BenchSpec spec = base;
      spec.rho = rho;
      spec.strategy = parse_select_strategy(s);
      spec.validate();
      specs.push_back(spec);
    }
  }
  if (specs.empty()) throw ConfigError("bench spec selects no runs");
  return specs;
}

std::vector<BenchResult> bench(const fs::path& spec_file, const RunOptions& opts) {
  std::ifstream in(spec_file);
  if (!in) throw IoError("cannot open bench spec " + spec_file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::vector<BenchSpec> specs = parse_bench_spec(ss.str());
  // Strategies sharing a rho are timed together, interleaved.
  std::vector<BenchResult> results;
  for (std::size_t begin = 0; begin < specs.size();) {
    std::size_t end = begin;
    while (end < specs.size() && specs[end].rho == specs[begin].rho) ++end;
    const auto group = run_bench_group(std::vector<BenchSpec>(specs.begin() + static_cast<std::ptrdiff_t>(begin),
                                                              specs.begin() + static_cast<std::ptrdiff_t>(end)));
    for (const BenchResult& r : group) {
      say(opts, select_strategy_name(r.strategy) + " rho " + fixed(r.rho, 2) + ": " + fixed(r.median_ms, 3) + " ms");
      results.push_back(r);
    }
    begin = end;
  }
  const fs::path out = opts.out_dir ? fs::path(*opts.out_dir) : fs::path(".");
  fs::create_directories(out);
  emit_report(out / "bench.csv", results);
  if (opts.log) print_table(*opts.log, results);
  return results;
}

void report(const fs::path& dir, std::ostream& os) {
  if (!fs::is_directory(dir)) throw IoError("no output directory " + dir.string());
  bool any = false;
  if (fs::exists(dir / "epochs.csv")) {
    const CsvTable t = read_csv(dir / "epochs.csv");
    if (!t.rows.empty()) {
      const std::size_t last = t.rows.size() - 1;
      os << "stage I: " << t.rows.size() << " epochs, loss " << fixed(t.number(last, "mean_loss")) << ", widest "
         << fixed(t.number(last, "widest_accuracy")) << ", slimmest " << fixed(t.number(last, "slimmest_accuracy"))
         << '\n';
      any = true;
    }
  }
  if (fs::exists(dir / "gate_epochs.csv")) {
    const CsvTable t = read_csv(dir / "gate_epochs.csv");
    if (!t.rows.empty()) {
      const std::size_t last = t.rows.size() - 1;
      os << "stage II: " << t.rows.size() << " epochs, routed accuracy " << fixed(t.number(last, "test_accuracy"))
         << ", mean MAdds " << fixed(t.number(last, "mean_madds"), 0) << '\n';
      any = true;
    }
  }
  std::optional<CsvTable> sweep;
  if (fs::exists(dir / "sweep.csv")) {
    sweep = read_csv(dir / "sweep.csv");
    std::size_t best = 0;
    for (std::size_t i = 1; i < sweep->rows.size(); ++i) {
      if (sweep->number(i, "accuracy") > sweep->number(best, "accuracy")) best = i;
    }
    if (!sweep->rows.empty()) {
      os << "sweep: " << sweep->rows.size() << " paths, best " << sweep->rows[best][0] << " at "
         << fixed(sweep->number(best, "accuracy")) << '\n';
    }
    any = true;
  }
  if (fs::exists(dir / "routed.csv")) {
    const CsvTable t = read_csv(dir / "routed.csv");
    if (!t.rows.empty()) {
      const double acc = t.number(0, "accuracy");
      const double madds = t.number(0, "mean_madds");
      os << "routed: accuracy " << fixed(acc) << ", mean MAdds " << fixed(madds, 0) << '\n';
      if (sweep && !sweep->rows.empty()) {
        // Fixed path whose cost is closest to the routed mean.
        std::size_t near = 0;
        for (std::size_t i = 1; i < sweep->rows.size(); ++i) {
          if (std::abs(sweep->number(i, "madds") - madds) < std::abs(sweep->number(near, "madds") - madds)) near = i;
        }
        os << "  nearest fixed path " << sweep->rows[near][0] << " (" << fixed(sweep->number(near, "madds"), 0)
           << " MAdds): accuracy " << fixed(sweep->number(near, "accuracy")) << '\n';
      }
    }
    any = true;
  }
  if (fs::exists(dir / "bench.csv")) {
    for (const ReportRow& r : parse_report(dir / "bench.csv")) {
      os << "bench " << r.strategy << " rho " << fixed(r.rho, 2) << ": " << fixed(r.median_ms, 3) << " ms (x"
         << fixed(r.speedup_vs_full, 2) << ")\n";
    }
    any = true;
  }
  if (!any) throw IoError("no metrics under " + dir.string());
}

}  // namespace dsnet::experiment
