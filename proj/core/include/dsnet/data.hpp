// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dsnet/random.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

/// Per-channel constants applied after scaling pixels to [0, 1].
struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;

  static Normalization identity(std::size_t channels);
  static Normalization cifar10();
};

struct Dataset {
  Tensor images;  ///< [n, C, H, W], normalized
  std::vector<int> labels;
  std::size_t classes = 10;
  std::string split;

  std::size_t size() const { return labels.size(); }
  /// Throws FormatError if labels are out of range or counts disagree.
  void validate() const;
};

/// Reads an IDX image file (magic 0x00000803, u8 pixels) and its IDX label
/// file (magic 0x00000801). Errors carry the byte offset of the fault.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const Normalization& norm, std::size_t classes = 10);

/// Reads one CIFAR binary batch file: 3073-byte records (label, then 1024
/// bytes per channel plane in R, G, B order).
Dataset load_cifar_file(const std::filesystem::path& file, const Normalization& norm);

/// Concatenates the CIFAR batch files of a split under `dir`: data_batch_*.bin
/// for "train", test_batch.bin for "test".
Dataset load_cifar_binary(const std::filesystem::path& dir, const std::string& split, const Normalization& norm);

/// Raw u8 images [n, C, H, W] and labels, the on-disk form of both formats.
struct RawImages {
  std::size_t count = 0, channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
};

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const RawImages& raw);
void write_cifar_file(const std::filesystem::path& file, const RawImages& raw);

/// Procedural CIFAR-shaped classification data. Each class owns a texture
/// prototype; samples are translated, partially blended with another class,
/// and corrupted by a per-sample noise level, so difficulty varies widely
/// across samples.
struct SyntheticSpec {
  std::size_t count = 1000;
  std::size_t classes = 10;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  /// Seed of the class prototypes; keep it fixed across splits.
  std::uint64_t prototype_seed = 1234;
  /// Seed of the per-sample draws; use a different one per split.
  std::uint64_t sample_seed = 1;
};
RawImages synthesize(const SyntheticSpec& spec);
/// Bumped whenever synthesize() changes its output for a given spec.
inline constexpr int kSyntheticGeneratorVersion = 3;

/// Writes a synthetic train split (data_batch_1..5.bin) and test split
/// (test_batch.bin) under `dir` in CIFAR binary format.
void write_synthetic_cifar(const std::filesystem::path& dir, std::size_t train_count, std::size_t test_count,
                           std::uint64_t seed);

/// Deterministic per-class subset: the first `per_class` samples of each class
/// after a seeded shuffle, in shuffled order.
Dataset stratified_subset(const Dataset& ds, std::size_t total, std::uint64_t seed);

struct Augment {
  bool flip = false;
  std::size_t pad = 0;  ///< pad-and-crop translation, 0 disables
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// One pass over a dataset. The permutation depends only on the seed; the
/// final partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle = true,
                Augment augment = {});

  bool next(Batch& out);
  std::size_t batches_per_epoch() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  Augment augment_;
  Rng aug_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Copies samples `indices` into a contiguous batch.
Batch gather(const Dataset& ds, std::span<const std::size_t> indices, const Augment& augment = {},
             Rng* rng = nullptr);

}  // namespace dsnet
