// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "dsnet/errors.hpp"

namespace dsnet {

namespace fs = std::filesystem;

Normalization Normalization::identity(std::size_t channels) {
  return {std::vector<float>(channels, 0.0f), std::vector<float>(channels, 1.0f)};
}

Normalization Normalization::cifar10() { return {{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}}; }

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw FormatError("image count " + std::to_string(images.rank() ? images.dim(0) : 0) +
                          " does not match label count " + std::to_string(labels.size()),
                      0);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw FormatError("label " + std::to_string(labels[i]) + " out of range", i);
    }
  }
}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset) {
  if (offset + 4 > b.size()) throw FormatError("truncated IDX header", b.size());
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) | (std::uint32_t{b[offset + 2]} << 8) |
         std::uint32_t{b[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

Tensor normalize(const std::uint8_t* pixels, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                 const Normalization& norm) {
  if (norm.mean.size() != c || norm.stddev.size() != c) {
    throw ConfigError("normalization constants need " + std::to_string(c) + " channels");
  }
  Tensor t(Shape{n, c, h, w});
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float m = norm.mean[ch];
      const float inv = 1.0f / norm.stddev[ch];
      const std::size_t base = (i * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) t[base + p] = (static_cast<float>(pixels[base + p]) / 255.0f - m) * inv;
    }
  }
  return t;
}

}  // namespace

Dataset load_idx(const fs::path& images, const fs::path& labels, const Normalization& norm, std::size_t classes) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  if (read_be32(ib, 0) != 0x00000803u) throw FormatError("bad IDX image magic in " + images.string(), 0);
  if (read_be32(lb, 0) != 0x00000801u) throw FormatError("bad IDX label magic in " + labels.string(), 0);
  const std::size_t n = read_be32(ib, 4);
  const std::size_t h = read_be32(ib, 8);
  const std::size_t w = read_be32(ib, 12);
  const std::size_t ln = read_be32(lb, 4);
  if (ln != n) throw FormatError("label count " + std::to_string(ln) + " differs from image count " + std::to_string(n), 4);
  if (ib.size() < 16 + n * h * w) throw FormatError("truncated IDX image payload", ib.size());
  if (lb.size() < 8 + n) throw FormatError("truncated IDX label payload", lb.size());

  Dataset ds;
  ds.classes = classes;
  ds.images = normalize(ib.data() + 16, n, 1, h, w, norm);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lb[8 + i];
    if (static_cast<std::size_t>(ds.labels[i]) >= classes) throw FormatError("label out of range", 8 + i);
  }
  return ds;
}

Dataset load_cifar_file(const fs::path& file, const Normalization& norm) {
  constexpr std::size_t kPlane = 32 * 32;
  constexpr std::size_t kRecord = 1 + 3 * kPlane;
  const auto bytes = read_file(file);
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw FormatError(file.string() + ": size is not a multiple of the 3073-byte record", bytes.size() / kRecord * kRecord);
  }
  const std::size_t n = bytes.size() / kRecord;
  std::vector<std::uint8_t> pixels(n * 3 * kPlane);
  Dataset ds;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kRecord;
    if (rec[0] >= 10) throw FormatError("CIFAR label out of range", i * kRecord);
    ds.labels[i] = rec[0];
    std::copy_n(rec + 1, 3 * kPlane, pixels.data() + i * 3 * kPlane);
  }
  ds.images = normalize(pixels.data(), n, 3, 32, 32, norm);
  return ds;
}

Dataset load_cifar_binary(const fs::path& dir, const std::string& split, const Normalization& norm) {
  std::vector<fs::path> files;
  if (split == "test") {
    files.push_back(dir / "test_batch.bin");
  } else if (split == "train") {
    for (int i = 1; i <= 5; ++i) {
      const fs::path p = dir / ("data_batch_" + std::to_string(i) + ".bin");
      if (fs::exists(p)) files.push_back(p);
    }
  } else {
    throw ConfigError("unknown split '" + split + "'");
  }
  if (files.empty() || !fs::exists(files.front())) throw IoError("no CIFAR " + split + " batches under " + dir.string());

  std::vector<Dataset> parts;
  std::size_t total = 0;
  for (const auto& f : files) {
    parts.push_back(load_cifar_file(f, norm));
    total += parts.back().size();
  }
  Dataset ds;
  ds.split = split;
  ds.images = Tensor(Shape{total, 3, 32, 32});
  std::size_t offset = 0;
  for (const Dataset& p : parts) {
    std::copy_n(p.images.data(), p.images.numel(), ds.images.data() + offset * 3 * 32 * 32);
    ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
    offset += p.size();
  }
  return ds;
}

void write_idx(const fs::path& images, const fs::path& labels, const RawImages& raw) {
  if (raw.channels != 1) throw ConfigError("IDX images are single-channel");
  std::vector<std::uint8_t> ib;
  put_be32(ib, 0x00000803u);
  put_be32(ib, static_cast<std::uint32_t>(raw.count));
  put_be32(ib, static_cast<std::uint32_t>(raw.height));
  put_be32(ib, static_cast<std::uint32_t>(raw.width));
  ib.insert(ib.end(), raw.pixels.begin(), raw.pixels.end());
  std::vector<std::uint8_t> lb;
  put_be32(lb, 0x00000801u);
  put_be32(lb, static_cast<std::uint32_t>(raw.labels.size()));
  lb.insert(lb.end(), raw.labels.begin(), raw.labels.end());
  write_file(images, ib);
  write_file(labels, lb);
}

void write_cifar_file(const fs::path& file, const RawImages& raw) {
  if (raw.channels != 3 || raw.height != 32 || raw.width != 32) throw ConfigError("CIFAR records are 3x32x32");
  constexpr std::size_t kImage = 3 * 32 * 32;
  std::vector<std::uint8_t> bytes;
  bytes.reserve(raw.count * (kImage + 1));
  for (std::size_t i = 0; i < raw.count; ++i) {
    bytes.push_back(raw.labels[i]);
    bytes.insert(bytes.end(), raw.pixels.begin() + static_cast<std::ptrdiff_t>(i * kImage),
                 raw.pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * kImage));
  }
  write_file(file, bytes);
}

RawImages synthesize(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.channels == 0 || spec.height == 0 || spec.width == 0) {
    throw ConfigError("invalid synthetic dataset shape");
  }
  const std::size_t c = spec.channels, h = spec.height, w = spec.width;
  const std::size_t image = c * h * w;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  // Prototypes: a few oriented gratings per channel plus a per-class tint.
  Rng proto_rng(spec.prototype_seed);
  std::vector<double> protos(spec.classes * image);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double tint = 0.12 * (proto_rng.uniform() * 2.0 - 1.0);
      double fx[3], fy[3], phase[3], amp[3];
      for (int g = 0; g < 3; ++g) {
        fx[g] = (proto_rng.uniform() * 2.0 - 1.0) * 3.0;
        fy[g] = (proto_rng.uniform() * 2.0 - 1.0) * 3.0;
        phase[g] = proto_rng.uniform() * kTwoPi;
        amp[g] = 0.08 + 0.08 * proto_rng.uniform();
      }
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double v = 0.5 + tint;
          for (int g = 0; g < 3; ++g) {
            v += amp[g] * std::sin(kTwoPi * (fx[g] * static_cast<double>(x) / static_cast<double>(w) +
                                             fy[g] * static_cast<double>(y) / static_cast<double>(h)) +
                                   phase[g]);
          }
          protos[k * image + (ch * h + y) * w + x] = v;
        }
      }
    }
  }

  Rng rng(spec.sample_seed);
  RawImages raw;
  raw.count = spec.count;
  raw.channels = c;
  raw.height = h;
  raw.width = w;
  raw.pixels.resize(spec.count * image);
  raw.labels.resize(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::size_t label = rng.below(spec.classes);
    std::size_t other = rng.below(spec.classes - 1);
    if (other >= label) ++other;
    // The blend stays below one half so the label always names the dominant
    // prototype; the channel offsets exceed the class tints so colour alone
    // does not identify the class.
    const double blend = 0.48 * rng.uniform();
    const double noise = 0.08 + 0.7 * rng.uniform() * rng.uniform();
    const double contrast = 0.4 + 0.8 * rng.uniform();
    double offset[3] = {};
    for (std::size_t ch = 0; ch < std::min<std::size_t>(c, 3); ++ch) offset[ch] = 0.2 * (rng.uniform() * 2.0 - 1.0);
    const std::size_t dx = rng.below(w), dy = rng.below(h);
    const std::size_t shift = std::max<std::size_t>(1, w / 8);
    const std::size_t sx = (dx % (2 * shift + 1) + w - shift) % w;
    const std::size_t sy = (dy % (2 * shift + 1) + h - shift) % h;
    raw.labels[i] = static_cast<std::uint8_t>(label);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t src = (ch * h + (y + sy) % h) * w + (x + sx) % w;
          const double mixed = (1.0 - blend) * protos[label * image + src] + blend * protos[other * image + src];
          const double v = 0.5 + offset[std::min<std::size_t>(ch, 2)] + contrast * (mixed - 0.5) + noise * rng.normal();
          raw.pixels[i * image + (ch * h + y) * w + x] =
              static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
        }
      }
    }
  }
  return raw;
}

void write_synthetic_cifar(const fs::path& dir, std::size_t train_count, std::size_t test_count, std::uint64_t seed) {
  constexpr std::size_t kImage = 3 * 32 * 32;
  SyntheticSpec spec;
  spec.prototype_seed = seed;
  spec.count = train_count;
  spec.sample_seed = seed + 1;
  const RawImages train = synthesize(spec);
  const std::size_t per_file = (train_count + 4) / 5;
  for (std::size_t f = 0; f < 5; ++f) {
    const std::size_t begin = std::min(train_count, f * per_file);
    const std::size_t end = std::min(train_count, begin + per_file);
    if (begin == end) break;
    RawImages part{end - begin, 3, 32, 32, {}, {}};
    part.pixels.assign(train.pixels.begin() + static_cast<std::ptrdiff_t>(begin * kImage),
                       train.pixels.begin() + static_cast<std::ptrdiff_t>(end * kImage));
    part.labels.assign(train.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                       train.labels.begin() + static_cast<std::ptrdiff_t>(end));
    write_cifar_file(dir / ("data_batch_" + std::to_string(f + 1) + ".bin"), part);
  }
  spec.count = test_count;
  spec.sample_seed = seed + 2;
  write_cifar_file(dir / "test_batch.bin", synthesize(spec));
}

Dataset stratified_subset(const Dataset& ds, std::size_t total, std::uint64_t seed) {
  if (total >= ds.size()) return ds;
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  // Largest-remainder quota per class keeps the class mix of the source.
  std::vector<std::size_t> count(ds.classes, 0);
  for (int l : ds.labels) ++count[static_cast<std::size_t>(l)];
  std::vector<std::size_t> quota(ds.classes);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < ds.classes; ++k) {
    const double exact = static_cast<double>(total) * static_cast<double>(count[k]) / static_cast<double>(ds.size());
    quota[k] = static_cast<std::size_t>(exact);
    assigned += quota[k];
    rem.emplace_back(-(exact - static_cast<double>(quota[k])), k);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++quota[rem[i % rem.size()].second];

  std::vector<std::size_t> picked;
  for (std::size_t idx : order) {
    std::size_t& q = quota[static_cast<std::size_t>(ds.labels[idx])];
    if (q > 0) {
      --q;
      picked.push_back(idx);
    }
  }
  Batch b = gather(ds, picked);
  Dataset out;
  out.images = b.images;
  out.labels = b.labels;
  out.classes = ds.classes;
  out.split = ds.split;
  return out;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices, const Augment& augment, Rng* rng) {
  const std::size_t c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
  const std::size_t image = c * h * w;
  Batch b;
  b.images = Tensor(Shape{indices.size(), c, h, w});
  b.labels.reserve(indices.size());
  b.indices.assign(indices.begin(), indices.end());
  const bool augmenting = (augment.flip || augment.pad > 0) && rng != nullptr;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw IndexError("sample index out of range");
    const float* src = ds.images.data() + indices[i] * image;
    float* dst = b.images.data() + i * image;
    b.labels.push_back(ds.labels[indices[i]]);
    if (!augmenting) {
      std::copy_n(src, image, dst);
      continue;
    }
    const bool flip = augment.flip && rng->below(2) == 1;
    const long p = static_cast<long>(augment.pad);
    const long ox = p ? static_cast<long>(rng->below(2 * augment.pad + 1)) - p : 0;
    const long oy = p ? static_cast<long>(rng->below(2 * augment.pad + 1)) - p : 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const long sy = static_cast<long>(y) + oy;
          long sx = static_cast<long>(x) + ox;
          if (flip) sx = static_cast<long>(w) - 1 - sx;
          const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
          dst[(ch * h + y) * w + x] = inside ? src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] : 0.0f;
        }
      }
    }
  }
  return b;
}

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle,
                             Augment augment)
    : ds_(&ds), batch_size_(batch_size), augment_(augment), aug_rng_(seed ^ 0x9e3779b97f4a7c15ull) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  order_.resize(ds.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (shuffle) {
    Rng rng(seed);
    std::shuffle(order_.begin(), order_.end(), rng.engine());
  }
}

std::size_t BatchIterator::batches_per_epoch() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  out = gather(*ds_, std::span<const std::size_t>(order_.data() + cursor_, end - cursor_), augment_, &aug_rng_);
  cursor_ = end;
  return true;
}

}  // namespace dsnet
