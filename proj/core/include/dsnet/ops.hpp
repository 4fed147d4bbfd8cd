// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// floor((in + 2*pad - kernel) / stride) + 1, or ShapeError if no position fits.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, ConvGeometry geom);

/// Row-major C = alpha * op(A) * op(B) + beta * C, single precision.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);

/// Pins the BLAS backend to one thread. Timed regions and determinism tests rely on it.
void set_single_threaded_kernels();
/// Process-wide setup for executables: single-threaded BLAS and an allocator
/// that keeps freed activation buffers for reuse.
void configure_runtime();

/// Lowers NCHW `x` into a [C*k*k, N*OH*OW] patch matrix.
Tensor im2col(const Tensor& x, std::size_t kernel, ConvGeometry geom);
/// Scatter-adds a [C*k*k, N*OH*OW] patch matrix back into `dx` (shape of the conv input).
void col2im_add(const float* col, Tensor& dx, std::size_t kernel, ConvGeometry geom);

/// Convolution with an arbitrary (possibly strided) weight block. `w` is
/// [out, in*k*k] with `in` equal to x.dim(1).
Tensor conv2d_block(const Tensor& x, MatrixView w, std::size_t kernel, ConvGeometry geom);

/// The [out, in*k*k] prefix block W[:out, :in] of an OIkk weight, without copying.
MatrixView weight_block(const Tensor& w, std::size_t out, std::size_t in);

/// Dense cross-correlation: x [N,I,H,W], w [O,I,k,k] -> [N,O,OH,OW].
Tensor conv2d(const Tensor& x, const Tensor& w, ConvGeometry geom);

/// Convolution restricted to W[:active_out, :x.dim(1)] (dynamic slicing).
Tensor conv2d_sliced(const Tensor& x, const Tensor& w, std::size_t active_out, ConvGeometry geom);

/// Full dense convolution, then zero every output channel >= active.
Tensor conv2d_masked(const Tensor& x, const Tensor& w, std::size_t active, ConvGeometry geom);

/// Gathers filters `idx` (strictly increasing) into a fresh buffer and convolves
/// with it. Output has idx.size() channels in idx order.
Tensor conv2d_indexed(const Tensor& x, const Tensor& w, std::span<const std::size_t> idx,
                      ConvGeometry geom);

// Elementwise and reduction suite.
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
/// NCHW -> NC spatial mean.
Tensor global_avg_pool(const Tensor& x);
/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Mean over rows of -log(p[row, label]); `probs` is [N,K].
double cross_entropy(const Tensor& probs, std::span<const int> labels);
/// Mean over rows of -sum(target * log(p)).
double cross_entropy(const Tensor& probs, const Tensor& target);
/// Index of the row maximum per row of a [N,K] tensor; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& x);

}  // namespace dsnet
