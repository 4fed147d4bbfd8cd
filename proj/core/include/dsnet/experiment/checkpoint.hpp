// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "dsnet/optim.hpp"
#include "dsnet/supernet.hpp"
#include "dsnet/train_ieb.hpp"

namespace dsnet::experiment {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named float32 tensors plus the manifest fields that travel with them.
///
/// On disk: the 8-byte magic "DSNETCKP", a little-endian u32 manifest length,
/// the JSON manifest (version, config hash, step, stage and the tensor index
/// with shapes and payload offsets), then the little-endian float32 payload.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_hash;
  std::uint64_t step = 0;
  /// Free-form pipeline stage tag ("supernet", "recalibrated", "gate").
  std::string stage;
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError for unreadable files and FormatError for corrupt ones.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Tensor names used by capture/restore:
///   param/<name>                        online parameters
///   ema/<name>                          EMA shadow parameters
///   velocity/<name>                     optimizer momentum
///   stats/<norm>/<width>/{mean,var}     recorded batch-norm statistics
///   ema_stats/<norm>/<width>/{mean,var}
Checkpoint capture(Supernet& net, EmaState* ema, Sgd* optimizer, const std::string& config_hash, std::uint64_t step,
                   const std::string& stage);

/// Copies a checkpoint into live objects. A config-hash mismatch raises
/// ConfigError unless `force`; a missing or mis-shaped parameter raises
/// FormatError. EMA and optimizer state are restored only when present.
void restore(const Checkpoint& ckpt, Supernet& net, EmaState* ema, Sgd* optimizer, const std::string& config_hash,
             bool force = false);

/// FNV-1a 64 over the names and raw bytes of the given parameters.
std::string parameter_hash(const std::vector<ad::Parameter*>& params);

}  // namespace dsnet::experiment
