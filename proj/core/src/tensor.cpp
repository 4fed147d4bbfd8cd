// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "dsnet/errors.hpp"

namespace dsnet {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::empty(Shape shape) {
  Tensor t;
  t.numel_ = shape_numel(shape);
  t.shape_ = std::move(shape);
  // Default-initialized floats: no zeroing pass.
  t.storage_ = std::shared_ptr<float[]>(new float[std::max<std::size_t>(t.numel_, 1)]);
  return t;
}

Tensor::Tensor(Shape shape, float fill) : Tensor(empty(std::move(shape))) { std::fill_n(data(), numel_, fill); }

Tensor::Tensor(Shape shape, std::vector<float> values) : Tensor(empty(std::move(shape))) {
  if (values.size() != numel_) {
    throw ShapeError("tensor of shape " + shape_str(shape_) + " needs " + std::to_string(numel_) +
                     " values, got " + std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), data());
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

namespace {
std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index) {
  if (index.size() != shape.size()) throw ShapeError("index rank does not match tensor rank");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape[axis]) throw IndexError("index out of range on axis " + std::to_string(axis));
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}
}  // namespace

float& Tensor::at(std::initializer_list<std::size_t> index) { return data()[flat_index(shape_, index)]; }

float Tensor::at(std::initializer_list<std::size_t> index) const { return data()[flat_index(shape_, index)]; }

float Tensor::item() const {
  if (numel_ != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data()[0];
}

Tensor Tensor::clone() const {
  if (!defined()) return {};
  Tensor out = empty(shape_);
  std::copy_n(data(), numel_, out.data());
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel_) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(float v) { std::fill_n(data(), numel_, v); }

void Tensor::copy_from(const Tensor& src) {
  if (src.numel() != numel_) throw ShapeError("copy_from between tensors of different size");
  std::copy_n(src.data(), numel_, data());
}

Tensor slice_channels(const Tensor& t, std::size_t k) {
  if (t.rank() == 0 || k == 0 || k > t.shape_[0]) {
    throw SliceError("cannot take " + std::to_string(k) + " leading slabs of shape " + shape_str(t.shape_));
  }
  Tensor view = t;
  view.shape_[0] = k;
  view.numel_ = t.numel_ / t.shape_[0] * k;
  return view;
}

}  // namespace dsnet
