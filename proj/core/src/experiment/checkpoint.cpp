// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/experiment/checkpoint.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "dsnet/errors.hpp"

namespace dsnet::experiment {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'D', 'S', 'N', 'E', 'T', 'C', 'K', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::string norm_key(const SwitchableNorm& n) {
  std::string name = n.gamma.name;
  const std::string suffix = ".gamma";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    name.resize(name.size() - suffix.size());
  }
  return name;
}

void capture_stats(Supernet& net, const std::string& prefix, std::map<std::string, Tensor>& out) {
  for (SwitchableNorm* n : net.norms()) {
    for (const auto& [width, stats] : n->stats()) {
      const std::string base = prefix + "/" + norm_key(*n) + "/" + std::to_string(width);
      out[base + "/mean"] = stats.mean.clone();
      out[base + "/var"] = stats.var.clone();
    }
  }
}

void restore_stats(const Checkpoint& ckpt, Supernet& net, const std::string& prefix) {
  for (SwitchableNorm* n : net.norms()) {
    n->stats().clear();
    const std::string base = prefix + "/" + norm_key(*n) + "/";
    for (auto it = ckpt.tensors.lower_bound(base); it != ckpt.tensors.end() && it->first.starts_with(base); ++it) {
      const std::string rest = it->first.substr(base.size());
      const auto slash = rest.find('/');
      if (slash == std::string::npos) throw FormatError("malformed statistics entry " + it->first, 0);
      const std::size_t width = std::stoul(rest.substr(0, slash));
      const std::string field = rest.substr(slash + 1);
      if (field == "mean") {
        n->stats()[width].mean = it->second.clone();
      } else if (field == "var") {
        n->stats()[width].var = it->second.clone();
      } else {
        throw FormatError("malformed statistics entry " + it->first, 0);
      }
    }
  }
}

void restore_params(const Checkpoint& ckpt, const std::vector<ad::Parameter*>& params, const std::string& prefix) {
  for (ad::Parameter* p : params) {
    auto it = ckpt.tensors.find(prefix + "/" + p->name);
    if (it == ckpt.tensors.end()) throw FormatError("checkpoint lacks " + prefix + "/" + p->name, 0);
    if (it->second.shape() != p->value.shape()) {
      throw FormatError(prefix + "/" + p->name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                            shape_str(p->value.shape()),
                        0);
    }
    p->value.copy_from(it->second);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json manifest;
  manifest["version"] = ckpt.version;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["step"] = ckpt.step;
  manifest["stage"] = ckpt.stage;
  manifest["tensors"] = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = manifest.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  bytes.reserve(bytes.size() + 4 * offset);
  for (const auto& [name, t] : ckpt.tensors) {
    for (float f : t.values()) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(bytes, u);
    }
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError(path.string() + " is not a checkpoint", 0);
  }
  const std::size_t mlen = get_u32(raw + 8);
  if (12 + mlen > bytes.size()) throw FormatError("truncated checkpoint manifest", 8);
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what(), 12);
  }

  Checkpoint ckpt;
  const std::size_t payload = 12 + mlen;
  try {
    ckpt.version = manifest.at("version").get<std::uint32_t>();
    if (ckpt.version != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version), 12);
    }
    ckpt.config_hash = manifest.at("config_hash").get<std::string>();
    ckpt.step = manifest.at("step").get<std::uint64_t>();
    ckpt.stage = manifest.at("stage").get<std::string>();
    for (const json& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      Tensor t(shape);
      const std::size_t begin = payload + 4 * offset;
      if (begin + 4 * t.numel() > bytes.size()) throw FormatError("payload of " + name + " is truncated", begin);
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const std::uint32_t u = get_u32(raw + begin + 4 * i);
        std::memcpy(t.data() + i, &u, 4);
      }
      ckpt.tensors.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what(), 12);
  }
  return ckpt;
}

Checkpoint capture(Supernet& net, EmaState* ema, Sgd* optimizer, const std::string& config_hash, std::uint64_t step,
                   const std::string& stage) {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash;
  ckpt.step = step;
  ckpt.stage = stage;
  for (ad::Parameter* p : net.parameters()) ckpt.tensors["param/" + p->name] = p->value.clone();
  capture_stats(net, "stats", ckpt.tensors);
  if (ema) {
    for (ad::Parameter* p : ema->shadow().parameters()) ckpt.tensors["ema/" + p->name] = p->value.clone();
    capture_stats(ema->shadow(), "ema_stats", ckpt.tensors);
  }
  if (optimizer) {
    for (const auto& [name, v] : optimizer->velocity()) ckpt.tensors["velocity/" + name] = v.clone();
  }
  return ckpt;
}

void restore(const Checkpoint& ckpt, Supernet& net, EmaState* ema, Sgd* optimizer, const std::string& config_hash,
             bool force) {
  if (ckpt.config_hash != config_hash && !force) {
    throw ConfigError("checkpoint was written for config " + ckpt.config_hash + ", current config is " +
                      config_hash + " (use force to override)");
  }
  restore_params(ckpt, net.parameters(), "param");
  restore_stats(ckpt, net, "stats");
  if (ema && ckpt.tensors.lower_bound("ema/") != ckpt.tensors.end() &&
      ckpt.tensors.lower_bound("ema/")->first.starts_with("ema/")) {
    restore_params(ckpt, ema->shadow().parameters(), "ema");
    restore_stats(ckpt, ema->shadow(), "ema_stats");
    ema->resync();
    ema->set_steps(ckpt.step);
  }
  if (optimizer) {
    optimizer->velocity().clear();
    for (auto it = ckpt.tensors.lower_bound("velocity/"); it != ckpt.tensors.end() && it->first.starts_with("velocity/");
         ++it) {
      optimizer->velocity()[it->first.substr(9)] = it->second.clone();
    }
  }
}

std::string parameter_hash(const std::vector<ad::Parameter*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const ad::Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), 4 * p->value.numel());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dsnet::experiment
