// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/experiment/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dsnet/errors.hpp"
#include "dsnet/train_ieb.hpp"
#include "dsnet/train_sgs.hpp"

namespace dsnet::experiment {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Visits the members of one object; whatever is left unvisited at the end is
// an unknown key.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + where(it.key().c_str()));
    }
  }

  std::string where(const char* key = nullptr) const {
    std::string w = path_.empty() ? std::string("<root>") : path_;
    if (key) w = path_.empty() ? std::string(key) : path_ + "." + key;
    return "'" + w + "'";
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* norm_name(NormKind k) { return k == NormKind::GroupNorm ? "group" : "batch"; }
NormKind parse_norm(const std::string& s) {
  if (s == "group") return NormKind::GroupNorm;
  if (s == "batch") return NormKind::BatchNorm;
  throw ConfigError("unknown norm '" + s + "' (expected group or batch)");
}
const char* head_name(HeadDesign h) { return h == HeadDesign::OneHot ? "one-hot" : "scalar"; }
HeadDesign parse_head(const std::string& s) {
  if (s == "one-hot") return HeadDesign::OneHot;
  if (s == "scalar") return HeadDesign::Scalar;
  throw ConfigError("unknown head design '" + s + "' (expected one-hot or scalar)");
}
const char* arch_name(Architecture a) { return a == Architecture::Residual ? "residual" : "plain"; }

SupernetConfig preset_config(const std::string& preset) {
  if (preset == "residual") return SupernetConfig::residual_analog();
  if (preset == "plain") return SupernetConfig::plain_analog();
  throw ConfigError("unknown preset '" + preset + "' (expected residual or plain)");
}

void read_network(const json& j, SupernetConfig& net) {
  Section s(j, "network");
  s.get("in_channels", net.in_channels);
  s.get("height", net.height);
  s.get("width", net.width);
  s.get("classes", net.classes);
  s.get("stem_channels", net.stem_channels);
  s.get("stem_stride", net.stem_stride);
  s.get("stem_kernel", net.stem_kernel);
  s.get("interval", net.interval);
  s.get("max_group_size", net.max_group_size);
  std::string text;
  s.get("norm", text);
  if (!text.empty()) net.norm = parse_norm(text);
  text.clear();
  s.get("head_design", text);
  if (!text.empty()) net.head_design = parse_head(text);
  if (const json* stages = s.child("stages")) {
    if (!stages->is_array()) throw ConfigError("'network.stages' must be an array");
    net.stages.clear();
    for (std::size_t i = 0; i < stages->size(); ++i) {
      Section st((*stages)[i], "network.stages[" + std::to_string(i) + "]");
      StageSpec spec;
      st.get("blocks", spec.blocks);
      st.get("channels", spec.channels);
      st.get("stride", spec.stride);
      st.get("candidates", spec.candidates);
      st.finish();
      net.stages.push_back(spec);
    }
  }
  s.finish();
}

void read_data(const json& j, DataConfig& d) {
  Section s(j, "data");
  s.get("source", d.source);
  s.get("dir", d.dir);
  s.get("train_images", d.train_images);
  s.get("train_labels", d.train_labels);
  s.get("test_images", d.test_images);
  s.get("test_labels", d.test_labels);
  s.get("train_subset", d.train_subset);
  s.get("test_subset", d.test_subset);
  s.get("synthetic_train", d.synthetic_train);
  s.get("synthetic_test", d.synthetic_test);
  s.get("synthetic_seed", d.synthetic_seed);
  s.get("mean", d.mean);
  s.get("stddev", d.stddev);
  s.get("flip", d.flip);
  s.get("pad", d.pad);
  s.finish();
}

void read_stage1(const json& j, StageOneConfig& c) {
  Section s(j, "stage1");
  s.get("epochs", c.epochs);
  s.get("batch_size", c.batch_size);
  s.get("lr", c.lr);
  s.get("momentum", c.momentum);
  s.get("weight_decay", c.weight_decay);
  s.get("random_paths", c.random_paths);
  s.get("alpha", c.alpha);
  s.get("alpha_start", c.alpha_start);
  s.get("alpha_ramp", c.alpha_ramp);
  s.get("ablation", c.ablation);
  s.finish();
}

void read_stage2(const json& j, StageTwoConfig& c) {
  Section s(j, "stage2");
  s.get("epochs", c.epochs);
  s.get("batch_size", c.batch_size);
  s.get("lr", c.lr);
  s.get("lr_decay", c.lr_decay);
  s.get("momentum", c.momentum);
  s.get("lambda_cls", c.lambda_cls);
  s.get("lambda_cplx", c.lambda_cplx);
  s.get("lambda_sgs", c.lambda_sgs);
  s.get("strategy", c.strategy);
  s.get("tau", c.tau);
  s.get("gumbel_noise", c.gumbel_noise);
  s.get("restrict_ratios", c.restrict_ratios);
  s.finish();
}

ordered_json network_json(const SupernetConfig& n) {
  ordered_json j;
  j["architecture"] = arch_name(n.arch);
  j["in_channels"] = n.in_channels;
  j["height"] = n.height;
  j["width"] = n.width;
  j["classes"] = n.classes;
  j["stem_channels"] = n.stem_channels;
  j["stem_stride"] = n.stem_stride;
  j["stem_kernel"] = n.stem_kernel;
  j["interval"] = n.interval;
  j["max_group_size"] = n.max_group_size;
  j["norm"] = norm_name(n.norm);
  j["head_design"] = head_name(n.head_design);
  j["stages"] = ordered_json::array();
  for (const StageSpec& st : n.stages) {
    ordered_json o;
    o["blocks"] = st.blocks;
    o["channels"] = st.channels;
    o["stride"] = st.stride;
    o["candidates"] = st.candidates;
    j["stages"].push_back(o);
  }
  return j;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) line += text[i] == '\n';
  return line;
}

}  // namespace

void ExperimentConfig::validate() const {
  net.validate();
  if (data.source != "synthetic" && data.source != "cifar" && data.source != "idx") {
    throw ConfigError("data.source must be synthetic, cifar or idx");
  }
  if (data.source == "idx" && (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
                               data.test_labels.empty())) {
    throw ConfigError("idx data needs train/test image and label paths");
  }
  if (data.mean.size() != data.stddev.size()) throw ConfigError("data.mean and data.stddev differ in length");
  if (!data.mean.empty() && data.mean.size() != net.in_channels) {
    throw ConfigError("normalization constants do not match in_channels");
  }
  for (float s : data.stddev) {
    if (!(s > 0.0f)) throw ConfigError("data.stddev entries must be positive");
  }
  if (stage1.batch_size == 0 || stage2.batch_size == 0 || eval_batch_size == 0) {
    throw ConfigError("batch sizes must be positive");
  }
  if (!(stage1.lr > 0.0) || !(stage2.lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (stage1.momentum < 0.0 || stage1.momentum >= 1.0 || stage2.momentum < 0.0 || stage2.momentum >= 1.0) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (stage1.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(stage2.lr_decay > 0.0) || stage2.lr_decay > 1.0) throw ConfigError("stage2.lr_decay must lie in (0, 1]");
  IebConfig ieb{stage1.random_paths, stage1.alpha, stage1.alpha_start, stage1.alpha_ramp,
                parse_ablation(stage1.ablation)};
  ieb.validate();
  SgsConfig sgs{stage2.lambda_cls, stage2.lambda_cplx, stage2.lambda_sgs, parse_strategy(stage2.strategy),
                static_cast<float>(stage2.tau), stage2.gumbel_noise};
  sgs.validate();
  for (double r : stage2.restrict_ratios) {
    bool found = false;
    for (std::size_t s : net.gated_stages()) {
      for (double c : net.stages[s].candidates) found = found || std::abs(c - r) < 1e-9;
    }
    if (!found) throw ConfigError("restricted ratio " + std::to_string(r) + " is not a candidate of any stage");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error at line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  ExperimentConfig c;
  Section root(j, "");
  root.get("name", c.name);
  root.get("preset", c.preset);
  c.net = preset_config(c.preset);
  if (const json* n = root.child("network")) {
    // The architecture follows the preset; it is echoed back for provenance.
    json copy = *n;
    if (copy.is_object() && copy.contains("architecture")) {
      if (copy["architecture"] != arch_name(c.net.arch)) {
        throw ConfigError("'network.architecture' disagrees with preset '" + c.preset + "'");
      }
      copy.erase("architecture");
    }
    read_network(copy, c.net);
  }
  if (const json* d = root.child("data")) read_data(*d, c.data);
  if (const json* s = root.child("stage1")) read_stage1(*s, c.stage1);
  if (const json* s = root.child("stage2")) read_stage2(*s, c.stage2);
  root.get("recalibration_batches", c.recalibration_batches);
  root.get("eval_batch_size", c.eval_batch_size);
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& c) {
  ordered_json j;
  j["name"] = c.name;
  j["preset"] = c.preset;
  j["network"] = network_json(c.net);
  ordered_json d;
  d["source"] = c.data.source;
  d["dir"] = c.data.dir;
  d["train_images"] = c.data.train_images;
  d["train_labels"] = c.data.train_labels;
  d["test_images"] = c.data.test_images;
  d["test_labels"] = c.data.test_labels;
  d["train_subset"] = c.data.train_subset;
  d["test_subset"] = c.data.test_subset;
  d["synthetic_train"] = c.data.synthetic_train;
  d["synthetic_test"] = c.data.synthetic_test;
  d["synthetic_seed"] = c.data.synthetic_seed;
  d["mean"] = c.data.mean;
  d["stddev"] = c.data.stddev;
  d["flip"] = c.data.flip;
  d["pad"] = c.data.pad;
  j["data"] = d;
  ordered_json s1;
  s1["epochs"] = c.stage1.epochs;
  s1["batch_size"] = c.stage1.batch_size;
  s1["lr"] = c.stage1.lr;
  s1["momentum"] = c.stage1.momentum;
  s1["weight_decay"] = c.stage1.weight_decay;
  s1["random_paths"] = c.stage1.random_paths;
  s1["alpha"] = c.stage1.alpha;
  s1["alpha_start"] = c.stage1.alpha_start;
  s1["alpha_ramp"] = c.stage1.alpha_ramp;
  s1["ablation"] = c.stage1.ablation;
  j["stage1"] = s1;
  ordered_json s2;
  s2["epochs"] = c.stage2.epochs;
  s2["batch_size"] = c.stage2.batch_size;
  s2["lr"] = c.stage2.lr;
  s2["lr_decay"] = c.stage2.lr_decay;
  s2["momentum"] = c.stage2.momentum;
  s2["lambda_cls"] = c.stage2.lambda_cls;
  s2["lambda_cplx"] = c.stage2.lambda_cplx;
  s2["lambda_sgs"] = c.stage2.lambda_sgs;
  s2["strategy"] = c.stage2.strategy;
  s2["tau"] = c.stage2.tau;
  s2["gumbel_noise"] = c.stage2.gumbel_noise;
  s2["restrict_ratios"] = c.stage2.restrict_ratios;
  j["stage2"] = s2;
  j["recalibration_batches"] = c.recalibration_batches;
  j["eval_batch_size"] = c.eval_batch_size;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  return j.dump(2) + "\n";
}

std::string network_hash(const SupernetConfig& config) {
  const std::string text = network_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dsnet::experiment
