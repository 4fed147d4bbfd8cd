// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array.
///
/// Copies are shallow: two Tensor values may alias the same buffer, exactly
/// like a view. Use `clone()` for an independent copy. A tensor is always
/// contiguous; prefix views on the leading axis are expressed as an offset into
/// the parent's storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  /// Tensor with unspecified contents, for buffers that are fully overwritten.
  static Tensor empty(Shape shape);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return numel_; }
  bool defined() const noexcept { return storage_ != nullptr; }

  float* data() noexcept { return storage_ ? storage_.get() + offset_ : nullptr; }
  const float* data() const noexcept { return storage_ ? storage_.get() + offset_ : nullptr; }
  std::span<float> values() noexcept { return {data(), numel_}; }
  std::span<const float> values() const noexcept { return {data(), numel_}; }

  float& operator[](std::size_t i) noexcept { return data()[i]; }
  float operator[](std::size_t i) const noexcept { return data()[i]; }
  float& at(std::initializer_list<std::size_t> index);
  float at(std::initializer_list<std::size_t> index) const;
  float item() const;

  /// Element offset of this view inside its storage buffer.
  std::size_t storage_offset() const noexcept { return offset_; }
  const float* storage_base() const noexcept { return storage_.get(); }
  bool shares_storage(const Tensor& other) const noexcept {
    return storage_ != nullptr && storage_ == other.storage_;
  }

  Tensor clone() const;
  /// View with a new shape of the same element count.
  Tensor reshaped(Shape shape) const;
  void fill(float v);
  /// Element-wise copy from a tensor of identical numel.
  void copy_from(const Tensor& src);

 private:
  friend Tensor slice_channels(const Tensor& t, std::size_t k);

  std::shared_ptr<float[]> storage_;
  std::size_t offset_ = 0;
  std::size_t numel_ = 0;
  Shape shape_;
};

/// Zero-copy view of the first `k` slabs along the leading axis.
/// Throws SliceError unless 0 < k <= t.dim(0).
Tensor slice_channels(const Tensor& t, std::size_t k);

/// Non-owning row-major matrix view with an explicit leading dimension, used to
/// address 2-D prefix blocks (e.g. W[:n, :m]) without copying.
struct MatrixView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t ld = 0;
};

}  // namespace dsnet
