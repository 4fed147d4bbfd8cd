// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used only by tests. They share no code with the
// library beyond the Tensor container.

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dsnet/autodiff.hpp"
#include "dsnet/supernet.hpp"
#include "dsnet/tensor.hpp"

namespace oracle {

/// Direct cross-correlation with zero padding, accumulated in double.
/// x [N,I,H,W], w [O,I,k,k] -> [N,O,OH,OW].
dsnet::Tensor conv2d(const dsnet::Tensor& x, const dsnet::Tensor& w, std::size_t stride, std::size_t pad);

/// Triple loop, accumulated in double. a [M,K], b [K,N].
dsnet::Tensor matmul(const dsnet::Tensor& a, const dsnet::Tensor& b);

/// max |a - b| over max |b|: error relative to the output scale.
double scaled_max_diff(const dsnet::Tensor& a, const dsnet::Tensor& b);

/// Max over elements of |a - b| / max(|a|, |b|, floor).
double max_rel_diff(const dsnet::Tensor& a, const dsnet::Tensor& b, double floor = 1e-6);

struct GradCheck {
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||), per input.
  std::vector<double> rel_error;
  double worst() const;
};

/// Builds a scalar loss from the given leaves on a fresh tape.
using ScalarFn = std::function<dsnet::ad::Var(dsnet::ad::Tape&, const std::vector<dsnet::ad::Var>&)>;

/// Central differences of `fn` in every element of every input, against the
/// tape gradient. The loss is evaluated in float; `eps` is the step.
GradCheck check_gradients(const ScalarFn& fn, const std::vector<dsnet::Tensor>& inputs, double eps = 1e-2);

/// Multiply-adds of one sample along `path`, counted one tap at a time by
/// walking every convolution, gate and classifier loop of the network the
/// config describes. Padding taps count, pooling and normalization do not.
std::size_t count_madds(const dsnet::SupernetConfig& config, const dsnet::PathDescriptor& path);

/// Channel rounding rule re-derived for the counter.
std::size_t channels(double ratio, std::size_t base, std::size_t interval);

}  // namespace oracle
