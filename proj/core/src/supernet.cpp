// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "dsnet/errors.hpp"

namespace dsnet {

void SupernetConfig::validate() const {
  if (in_channels == 0 || height == 0 || width == 0 || classes < 2) throw ConfigError("invalid input shape or class count");
  if (stem_channels == 0 || stem_stride == 0 || stem_kernel == 0) throw ConfigError("invalid stem");
  if (stages.empty()) throw ConfigError("supernet needs at least one stage");
  if (gated_stages().empty()) throw ConfigError("supernet needs at least one gated stage");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageSpec& st = stages[s];
    if (st.blocks == 0 || st.stride == 0) throw ConfigError("stage " + std::to_string(s) + " needs blocks and stride");
    rule(s).validate();
  }
  // Walk the spatial extents so impossible shapes fail here rather than mid-forward.
  try {
    std::size_t h = conv_out_extent(height, stem_kernel, stem_geometry());
    std::size_t w = conv_out_extent(width, stem_kernel, stem_geometry());
    for (const StageSpec& st : stages) {
      h = conv_out_extent(h, 3, {st.stride, 1});
      w = conv_out_extent(w, 3, {st.stride, 1});
    }
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("input does not survive the downsampling: ") + e.what());
  }
}

std::vector<std::size_t> SupernetConfig::gated_stages() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].gated()) out.push_back(s);
  }
  return out;
}

std::size_t SupernetConfig::routing_space() const {
  std::size_t n = 1;
  for (std::size_t s : gated_stages()) n *= stages[s].candidates.size();
  return n;
}

WidthRule SupernetConfig::rule(std::size_t stage) const {
  const StageSpec& st = stages.at(stage);
  WidthRule r;
  r.candidates = st.gated() ? st.candidates : std::vector<double>{1.0};
  r.base = st.channels;
  r.interval = st.gated() ? interval : st.channels;
  return r;
}

SupernetConfig SupernetConfig::residual_analog() {
  SupernetConfig c;
  c.arch = Architecture::Residual;
  c.stem_channels = 16;
  c.stem_kernel = 4;
  c.stem_stride = 4;
  const std::vector<double> ratios{0.25, 0.5, 0.75, 1.0};
  c.stages = {StageSpec{1, 16, 1, ratios}, StageSpec{1, 32, 2, ratios}, StageSpec{1, 48, 2, ratios},
              StageSpec{1, 64, 1, ratios}};
  c.norm = NormKind::GroupNorm;
  return c;
}

SupernetConfig SupernetConfig::plain_analog() {
  SupernetConfig c;
  c.arch = Architecture::Plain;
  c.stem_channels = 16;
  c.stem_stride = 2;
  c.stages = {StageSpec{2, 16, 1, {}}, StageSpec{1, 32, 2, {}},
              StageSpec{3, 32, 2, {0.5, 0.625, 0.75, 0.875, 1.0, 1.125, 1.25}}};
  c.norm = NormKind::BatchNorm;
  return c;
}

std::string PathDescriptor::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (i) os << '-';
    os << ratios[i];
  }
  return os.str();
}

PathDescriptor widest_path(const SupernetConfig& config) {
  PathDescriptor p;
  for (std::size_t s : config.gated_stages()) p.ratios.push_back(config.stages[s].candidates.back());
  return p;
}

PathDescriptor slimmest_path(const SupernetConfig& config) {
  PathDescriptor p;
  for (std::size_t s : config.gated_stages()) p.ratios.push_back(config.stages[s].candidates.front());
  return p;
}

std::size_t path_index(const SupernetConfig& config, const PathDescriptor& path) {
  const auto gated = config.gated_stages();
  if (path.ratios.size() != gated.size()) {
    throw ConfigError("path has " + std::to_string(path.ratios.size()) + " ratios, supernet has " +
                      std::to_string(gated.size()) + " gated stages");
  }
  std::size_t index = 0;
  for (std::size_t i = 0; i < gated.size(); ++i) {
    const WidthRule r = config.rule(gated[i]);
    index = index * r.candidates.size() + r.index_of(path.ratios[i]);
  }
  return index;
}

PathDescriptor path_at(const SupernetConfig& config, std::size_t index) {
  if (index >= config.routing_space()) {
    throw IndexError("path index " + std::to_string(index) + " outside a routing space of " +
                     std::to_string(config.routing_space()));
  }
  const auto gated = config.gated_stages();
  PathDescriptor p;
  p.ratios.resize(gated.size());
  for (std::size_t i = gated.size(); i-- > 0;) {
    const auto& cands = config.stages[gated[i]].candidates;
    p.ratios[i] = cands[index % cands.size()];
    index /= cands.size();
  }
  return p;
}

std::vector<PathDescriptor> all_paths(const SupernetConfig& config) {
  std::vector<PathDescriptor> out;
  const std::size_t n = config.routing_space();
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(path_at(config, i));
  return out;
}

std::vector<PathDescriptor> sample_sandwich(const SupernetConfig& config, Rng& rng, std::size_t n) {
  std::vector<PathDescriptor> out{widest_path(config), slimmest_path(config)};
  const auto gated = config.gated_stages();
  for (std::size_t i = 0; i < n; ++i) {
    PathDescriptor p;
    for (std::size_t s : gated) {
      const auto& cands = config.stages[s].candidates;
      p.ratios.push_back(cands[rng.below(cands.size())]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

std::size_t stage_width(const SupernetConfig& config, std::size_t stage, const PathDescriptor& path) {
  const auto gated = config.gated_stages();
  const WidthRule r = config.rule(stage);
  const auto it = std::find(gated.begin(), gated.end(), stage);
  if (it == gated.end()) return r.channels(1.0);
  return r.channels(path.ratios.at(static_cast<std::size_t>(it - gated.begin())));
}

std::size_t stage_max_width(const SupernetConfig& config, std::size_t stage) { return config.rule(stage).max_channels(); }

bool block_has_gate(const SupernetConfig& config, std::size_t stage, std::size_t block) {
  if (config.arch == Architecture::Residual) return true;
  return block == 0 && config.stages[stage].gated();
}

}  // namespace

std::size_t count_madds(const SupernetConfig& config, const PathDescriptor& path) {
  config.validate();
  const auto gated = config.gated_stages();
  if (path.ratios.size() != gated.size()) throw ConfigError("path does not match gated stage count");
  std::size_t total = 0;
  std::size_t h = conv_out_extent(config.height, config.stem_kernel, config.stem_geometry());
  std::size_t w = conv_out_extent(config.width, config.stem_kernel, config.stem_geometry());
  total += config.stem_channels * h * w * config.in_channels * config.stem_kernel * config.stem_kernel;
  std::size_t in_width = config.stem_channels;
  std::size_t in_max = config.stem_channels;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const StageSpec& st = config.stages[s];
    const std::size_t width = stage_width(config, s, path);
    const std::size_t g = st.gated() && config.head_design == HeadDesign::OneHot ? st.candidates.size() : 1;
    for (std::size_t b = 0; b < st.blocks; ++b) {
      const std::size_t stride = b == 0 ? st.stride : 1;
      if (block_has_gate(config, s, b)) {
        const std::size_t d = gate_hidden_dim(in_max);
        total += 2 * d * in_width;
        if (b == 0 && st.gated()) total += g * d;
      }
      const std::size_t oh = conv_out_extent(h, 3, {stride, 1});
      const std::size_t ow = conv_out_extent(w, 3, {stride, 1});
      total += width * oh * ow * in_width * 9;
      if (config.arch == Architecture::Residual) {
        total += width * oh * ow * width * 9;
        if (b == 0) total += width * oh * ow * in_width;
      }
      h = oh;
      w = ow;
      in_width = width;
      in_max = stage_max_width(config, s);
    }
  }
  total += in_width * config.classes;
  return total;
}

std::vector<double> madds_table(const SupernetConfig& config) {
  std::vector<double> table;
  const std::size_t n = config.routing_space();
  table.reserve(n);
  for (std::size_t i = 0; i < n; ++i) table.push_back(static_cast<double>(count_madds(config, path_at(config, i))));
  return table;
}

Supernet::Supernet(SupernetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const NormKind kind = config_.norm;
  stem_ = SliceableConv2d("stem.conv", config_.in_channels, config_.stem_channels, config_.stem_kernel,
                          config_.stem_geometry(), true, rng);
  stem_norm_ = SwitchableNorm("stem.norm", kind, config_.stem_channels,
                              group_size_for({config_.stem_channels}, config_.max_group_size));
  std::size_t in_max = config_.stem_channels;
  std::size_t gated_counter = 0;
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const StageSpec& spec = config_.stages[s];
    Stage stage;
    stage.rule = config_.rule(s);
    if (spec.gated()) stage.gated_index = gated_counter++;
    const std::size_t out_max = stage.rule.max_channels();
    const std::size_t gs = group_size_for(stage.rule.all_channels(), config_.max_group_size);
    for (std::size_t b = 0; b < spec.blocks; ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b);
      const std::size_t stride = b == 0 ? spec.stride : 1;
      Block block;
      if (block_has_gate(config_, s, b)) {
        const bool slimming = b == 0 && spec.gated();
        block.gate.emplace(prefix + ".gate", in_max, slimming ? spec.candidates : std::vector<double>{},
                           config_.head_design, slimming, rng);
      }
      block.conv1 = SliceableConv2d(prefix + ".conv1", in_max, out_max, 3, {stride, 1}, true, rng);
      if (config_.arch == Architecture::Residual) {
        block.norm1 = SwitchableNorm(prefix + ".norm1", kind, out_max, gs);
        block.conv2.emplace(prefix + ".conv2", out_max, out_max, 3, ConvGeometry{1, 1}, true, rng);
        block.norm2.emplace(prefix + ".norm2", kind, out_max, gs, 0.0f);
        if (b == 0) {
          block.proj.emplace(prefix + ".proj", in_max, out_max, 1, ConvGeometry{stride, 0}, true, rng);
          block.proj_norm.emplace(prefix + ".proj_norm", kind, out_max, gs);
        }
      } else {
        block.norm1 = SwitchableNorm(prefix + ".norm", kind, out_max, gs);
      }
      stage.blocks.push_back(std::move(block));
      in_max = out_max;
    }
    stages_.push_back(std::move(stage));
  }
  fc_ = SliceableLinear("fc", in_max, config_.classes, true, rng);
  set_training_stage(TrainingStage::SupernetTraining);
}

Supernet Supernet::clone() const {
  Supernet copy(*this);
  for (ad::Parameter* p : copy.parameters()) {
    p->value = p->value.clone();
    p->grad = Tensor();
  }
  for (SwitchableNorm* n : copy.norms()) {
    for (auto& [width, stats] : n->stats()) {
      stats.mean = stats.mean.clone();
      stats.var = stats.var.clone();
    }
  }
  return copy;
}

std::vector<ad::Parameter*> Supernet::parameters() {
  std::vector<ad::Parameter*> out;
  stem_.collect(out);
  stem_norm_.collect(out);
  for (Stage& stage : stages_) {
    for (Block& b : stage.blocks) {
      if (b.gate) b.gate->collect(out);
      b.conv1.collect(out);
      b.norm1.collect(out);
      if (b.conv2) b.conv2->collect(out);
      if (b.norm2) b.norm2->collect(out);
      if (b.proj) b.proj->collect(out);
      if (b.proj_norm) b.proj_norm->collect(out);
    }
  }
  fc_.collect(out);
  return out;
}

std::vector<ad::Parameter*> Supernet::slimming_parameters() {
  std::vector<ad::Parameter*> out;
  for (Stage& stage : stages_) {
    if (stage.gated_index) out.push_back(&stage.blocks.front().gate->w2);
  }
  return out;
}

std::vector<SwitchableNorm*> Supernet::norms() {
  std::vector<SwitchableNorm*> out{&stem_norm_};
  for (Stage& stage : stages_) {
    for (Block& b : stage.blocks) {
      out.push_back(&b.norm1);
      if (b.norm2) out.push_back(&*b.norm2);
      if (b.proj_norm) out.push_back(&*b.proj_norm);
    }
  }
  return out;
}

std::vector<DoubleHeadedGate*> Supernet::gates() {
  std::vector<DoubleHeadedGate*> out;
  for (Stage& stage : stages_) {
    for (Block& b : stage.blocks) {
      if (b.gate) out.push_back(&*b.gate);
    }
  }
  return out;
}

DoubleHeadedGate& Supernet::slimming_gate(std::size_t i) {
  for (Stage& stage : stages_) {
    if (stage.gated_index && *stage.gated_index == i) return *stage.blocks.front().gate;
  }
  throw ConfigError("no gated stage " + std::to_string(i));
}

void Supernet::restrict_candidates(const std::vector<double>& ratios) {
  for (std::size_t i = 0; i < config_.gated_stages().size(); ++i) {
    DoubleHeadedGate& gate = slimming_gate(i);
    if (ratios.empty()) {
      gate.set_allowed({});
      continue;
    }
    std::vector<bool> allowed;
    for (double c : gate.candidates()) {
      allowed.push_back(std::any_of(ratios.begin(), ratios.end(), [c](double r) { return std::abs(r - c) < 1e-9; }));
    }
    gate.set_allowed(std::move(allowed));
  }
}

void Supernet::set_training_stage(TrainingStage stage) {
  training_stage_ = stage;
  const bool gate_training = stage == TrainingStage::GateTraining;
  for (ad::Parameter* p : parameters()) p->trainable = !gate_training;
  for (ad::Parameter* p : slimming_parameters()) p->trainable = gate_training;
}

ad::Var Supernet::run_block(ad::Tape& tape, Block& block, ad::Var h, std::size_t width, ad::Var mask,
                            const std::vector<std::size_t>* sample_widths, NormRegime regime) {
  auto masked = [&](ad::Var v) { return mask.valid() ? ad::channel_scale(v, mask) : v; };
  ad::Var y = block.conv1.forward(tape, h, width);
  y = ad::relu(block.norm1.forward(tape, y, regime, sample_widths));
  y = masked(y);
  if (config_.arch == Architecture::Plain) return y;
  y = block.conv2->forward(tape, y, width);
  y = block.norm2->forward(tape, y, regime, sample_widths);
  ad::Var skip = h;
  if (block.proj) skip = block.proj_norm->forward(tape, block.proj->forward(tape, h, width), regime, sample_widths);
  if (skip.dim(1) != width) throw ShapeError("identity skip width mismatch");
  return masked(ad::relu(ad::add(y, skip)));
}

ad::Var Supernet::run(ad::Tape& tape, ad::Var x, NormRegime regime, Route& route) {
  if (x.value().rank() != 4 || x.dim(1) != config_.in_channels || x.dim(2) != config_.height ||
      x.dim(3) != config_.width) {
    throw ShapeError("supernet input must be [N," + std::to_string(config_.in_channels) + "," +
                     std::to_string(config_.height) + "," + std::to_string(config_.width) + "], got " +
                     shape_str(x.shape()));
  }
  ad::Var h = stem_.forward(tape, x, config_.stem_channels);
  h = ad::relu(stem_norm_.forward(tape, h, regime));
  const std::size_t n = x.dim(0);
  for (Stage& stage : stages_) {
    std::size_t width = stage.rule.max_channels();
    ad::Var mask;
    std::vector<std::size_t> sample_widths;
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      Block& block = stage.blocks[b];
      ad::Var hid;
      if (block.gate) hid = block.gate->hidden(tape, DoubleHeadedGate::encode(h));
      if (b == 0 && stage.gated_index) {
        const std::size_t gi = *stage.gated_index;
        switch (route.mode) {
          case RouteMode::Fixed:
            width = stage.rule.channels(route.path->ratios.at(gi));
            break;
          case RouteMode::Routed: {
            auto slim = block.gate->slim(tape, hid);
            std::size_t idx = route.forced ? route.forced->at(gi) : slim.choice.at(0);
            width = stage.rule.channels_at(idx);
            route.out->choice.at(gi).push_back(idx);
            break;
          }
          case RouteMode::Masked: {
            const Tensor* noise = route.noise && gi < route.noise->size() ? &(*route.noise)[gi] : nullptr;
            auto slim = block.gate->slim(tape, hid, route.tau, noise ? *noise : Tensor{});
            const std::size_t g = stage.rule.candidates.size();
            width = stage.rule.max_channels();
            Tensor prefix(Shape{g, width});
            for (std::size_t i = 0; i < g; ++i) {
              std::fill_n(prefix.data() + i * width, stage.rule.channels_at(i), 1.0f);
            }
            mask = ad::matmul(slim.one_hot, tape.constant(prefix));
            sample_widths.resize(n);
            for (std::size_t s = 0; s < n; ++s) sample_widths[s] = stage.rule.channels_at(slim.choice[s]);
            if (route.out) {
              route.out->scores.at(gi) = slim.scores;
              route.out->one_hot.at(gi) = slim.one_hot;
              route.out->choice.at(gi) = slim.choice;
            }
            break;
          }
        }
      }
      if (block.gate) h = block.gate->attend(tape, h, hid);
      h = run_block(tape, block, h, width, mask, sample_widths.empty() ? nullptr : &sample_widths, regime);
    }
  }
  return fc_.forward(tape, DoubleHeadedGate::encode(h), config_.classes);
}

ad::Var Supernet::forward_at_path(ad::Tape& tape, ad::Var x, const PathDescriptor& path, NormRegime regime) {
  const auto gated = config_.gated_stages();
  if (path.ratios.size() != gated.size()) {
    throw ConfigError("path " + path.str() + " does not match " + std::to_string(gated.size()) + " gated stages");
  }
  for (std::size_t i = 0; i < gated.size(); ++i) stages_[gated[i]].rule.index_of(path.ratios[i]);
  Route route;
  route.mode = RouteMode::Fixed;
  route.path = &path;
  return run(tape, x, regime, route);
}

ad::Var Supernet::forward_gated(ad::Tape& tape, ad::Var x, NormRegime regime, const std::vector<Tensor>* noise,
                                float tau, GateOutputs* out) {
  if (config_.head_design != HeadDesign::OneHot) throw ConfigError("gated training requires the one-hot head design");
  const std::size_t gated = config_.gated_stages().size();
  GateOutputs local;
  GateOutputs* target = out ? out : &local;
  target->scores.assign(gated, {});
  target->one_hot.assign(gated, {});
  target->choice.assign(gated, {});
  Route route;
  route.mode = RouteMode::Masked;
  route.noise = noise;
  route.tau = tau;
  route.out = target;
  return run(tape, x, regime, route);
}

Supernet::Routed Supernet::forward_routed(const Tensor& x, NormRegime regime, const std::vector<std::size_t>* forced,
                                          std::size_t threads) {
  if (x.rank() != 4) throw ShapeError("forward_routed expects NCHW input");
  if (regime == NormRegime::Recalibrate) throw ContractError("routed inference cannot recalibrate statistics");
  const std::size_t n = x.dim(0);
  const std::size_t gated = config_.gated_stages().size();
  const std::size_t per = x.numel() / n;
  Routed result;
  result.logits = Tensor(Shape{n, config_.classes});
  result.choice.assign(gated, std::vector<std::size_t>(n));

  auto run_sample = [&](std::size_t s) {
    Tensor one(Shape{1, x.dim(1), x.dim(2), x.dim(3)});
    std::copy_n(x.data() + s * per, per, one.data());
    ad::Tape tape(false);
    GateOutputs trace;
    trace.choice.assign(gated, {});
    Route route;
    route.mode = RouteMode::Routed;
    route.forced = forced;
    route.out = &trace;
    ad::Var logits = run(tape, tape.constant(one), regime, route);
    std::copy_n(logits.value().data(), config_.classes, result.logits.data() + s * config_.classes);
    for (std::size_t g = 0; g < gated; ++g) result.choice[g][s] = trace.choice[g].at(0);
  };

  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t s = 0; s < n; ++s) run_sample(s);
    return result;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t s = t; s < n; s += threads) run_sample(s);
    });
  }
  for (auto& th : pool) th.join();
  return result;
}

void Supernet::begin_recalibration(const PathDescriptor& path) {
  const auto gated = config_.gated_stages();
  std::size_t width = config_.stem_channels;
  stem_norm_.begin_recalibration(width);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    width = stage_width(config_, s, path);
    for (Block& b : stages_[s].blocks) {
      b.norm1.begin_recalibration(width);
      if (b.norm2) b.norm2->begin_recalibration(width);
      if (b.proj_norm) b.proj_norm->begin_recalibration(width);
    }
  }
}

void Supernet::commit_recalibration() {
  for (SwitchableNorm* n : norms()) n->commit_recalibration();
}

}  // namespace dsnet
