// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dsnet/errors.hpp"

extern "C" void openblas_set_num_threads(int num_threads);

namespace dsnet {

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, ConvGeometry geom) {
  if (geom.stride == 0) throw ShapeError("convolution stride must be positive");
  const std::size_t padded = in + 2 * geom.pad;
  if (padded < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " + std::to_string(padded));
  }
  return (padded - kernel) / geom.stride + 1;
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = beta == 0.0f ? 0.0f : beta * c[i * ldc + j];
    }
    return;
  }
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void set_single_threaded_kernels() { openblas_set_num_threads(1); }

void configure_runtime() {
  set_single_threaded_kernels();
#if defined(__GLIBC__)
  // Activation buffers are large and short-lived; keep them on the heap
  // instead of mapping and unmapping pages on every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace {

// Output columns [lo, hi) whose input column xo*stride - pad + kj is in range.
std::pair<std::size_t, std::size_t> valid_span(std::size_t out, std::size_t in, std::size_t stride, std::size_t pad,
                                               std::size_t offset) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + offset < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + offset < pad + in) ++hi;
  return {lo, hi};
}

}  // namespace

Tensor im2col(const Tensor& x, std::size_t kernel, ConvGeometry geom) {
  if (x.rank() != 4) throw ShapeError("im2col expects NCHW input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = conv_out_extent(h, kernel, geom);
  const std::size_t ow = conv_out_extent(w, kernel, geom);
  const std::size_t plane = oh * ow;
  const std::size_t cols = n * plane;
  const std::size_t stride = geom.stride, pad = geom.pad;
  Tensor col = Tensor::empty(Shape{c * kernel * kernel, cols});
  const float* src = x.data();
  float* dst = col.data();
  for (std::size_t ki = 0; ki < kernel; ++ki) {
    const auto [ylo, yhi] = valid_span(oh, h, stride, pad, ki);
    for (std::size_t kj = 0; kj < kernel; ++kj) {
      const auto [xlo, xhi] = valid_span(ow, w, stride, pad, kj);
      for (std::size_t ch = 0; ch < c; ++ch) {
        float* row = dst + ((ch * kernel + ki) * kernel + kj) * cols;
        for (std::size_t s = 0; s < n; ++s) {
          const float* in = src + (s * c + ch) * h * w;
          float* out = row + s * plane;
          std::fill_n(out, ylo * ow, 0.0f);
          std::fill_n(out + yhi * ow, (oh - yhi) * ow, 0.0f);
          for (std::size_t y = ylo; y < yhi; ++y) {
            const float* irow = in + (y * stride + ki - pad) * w;
            float* orow = out + y * ow;
            std::fill_n(orow, xlo, 0.0f);
            std::fill_n(orow + xhi, ow - xhi, 0.0f);
            if (stride == 1) {
              std::memcpy(orow + xlo, irow + (xlo + kj - pad), (xhi - xlo) * sizeof(float));
            } else {
              for (std::size_t xo = xlo; xo < xhi; ++xo) orow[xo] = irow[xo * stride + kj - pad];
            }
          }
        }
      }
    }
  }
  return col;
}

void col2im_add(const float* col, Tensor& dx, std::size_t kernel, ConvGeometry geom) {
  const std::size_t n = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const std::size_t oh = conv_out_extent(h, kernel, geom);
  const std::size_t ow = conv_out_extent(w, kernel, geom);
  const std::size_t plane = oh * ow;
  const std::size_t cols = n * plane;
  const std::size_t stride = geom.stride, pad = geom.pad;
  float* dst = dx.data();
  for (std::size_t ki = 0; ki < kernel; ++ki) {
    const auto [ylo, yhi] = valid_span(oh, h, stride, pad, ki);
    for (std::size_t kj = 0; kj < kernel; ++kj) {
      const auto [xlo, xhi] = valid_span(ow, w, stride, pad, kj);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* row = col + ((ch * kernel + ki) * kernel + kj) * cols;
        for (std::size_t s = 0; s < n; ++s) {
          float* out = dst + (s * c + ch) * h * w;
          const float* in = row + s * plane;
          for (std::size_t y = ylo; y < yhi; ++y) {
            float* orow = out + (y * stride + ki - pad) * w;
            const float* irow = in + y * ow;
            for (std::size_t xo = xlo; xo < xhi; ++xo) orow[xo * stride + kj - pad] += irow[xo];
          }
        }
      }
    }
  }
}

MatrixView weight_block(const Tensor& w, std::size_t out, std::size_t in) {
  if (w.rank() != 4) throw ShapeError("conv weight must be OIkk, got " + shape_str(w.shape()));
  if (out == 0 || out > w.dim(0)) throw SliceError("output slice " + std::to_string(out) + " of " + shape_str(w.shape()));
  if (in == 0 || in > w.dim(1)) throw ShapeError("input width " + std::to_string(in) + " exceeds weight " + shape_str(w.shape()));
  const std::size_t kk = w.dim(2) * w.dim(3);
  return MatrixView{w.data(), out, in * kk, w.dim(1) * kk};
}

Tensor conv2d_block(const Tensor& x, MatrixView w, std::size_t kernel, ConvGeometry geom) {
  if (x.rank() != 4) throw ShapeError("conv2d expects NCHW input, got " + shape_str(x.shape()));
  if (w.cols != x.dim(1) * kernel * kernel) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                     std::to_string(w.cols / (kernel * kernel)));
  }
  const std::size_t n = x.dim(0);
  const std::size_t oh = conv_out_extent(x.dim(2), kernel, geom);
  const std::size_t ow = conv_out_extent(x.dim(3), kernel, geom);
  const std::size_t plane = oh * ow;
  const Tensor col = im2col(x, kernel, geom);
  Tensor out = Tensor::empty(Shape{n, w.rows, oh, ow});
  if (n == 1) {
    gemm(false, false, w.rows, plane, w.cols, 1.0f, w.data, w.ld, col.data(), plane, 0.0f, out.data(), plane);
    return out;
  }
  Tensor tmp = Tensor::empty(Shape{w.rows * n * plane});
  gemm(false, false, w.rows, n * plane, w.cols, 1.0f, w.data, w.ld, col.data(), n * plane, 0.0f, tmp.data(), n * plane);
  for (std::size_t o = 0; o < w.rows; ++o) {
    for (std::size_t s = 0; s < n; ++s) {
      std::memcpy(out.data() + (s * w.rows + o) * plane, tmp.data() + (o * n + s) * plane, plane * sizeof(float));
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, ConvGeometry geom) {
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) throw ShapeError("conv weight must be OIkk, got " + shape_str(w.shape()));
  if (x.rank() != 4 || x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d channel mismatch: x " + shape_str(x.shape()) + " vs w " + shape_str(w.shape()));
  }
  return conv2d_block(x, weight_block(w, w.dim(0), w.dim(1)), w.dim(2), geom);
}

Tensor conv2d_sliced(const Tensor& x, const Tensor& w, std::size_t active_out, ConvGeometry geom) {
  if (x.rank() != 4) throw ShapeError("conv2d expects NCHW input, got " + shape_str(x.shape()));
  return conv2d_block(x, weight_block(w, active_out, x.dim(1)), w.dim(2), geom);
}

Tensor conv2d_masked(const Tensor& x, const Tensor& w, std::size_t active, ConvGeometry geom) {
  Tensor y = conv2d(x, w, geom);
  const std::size_t n = y.dim(0), o = y.dim(1), plane = y.dim(2) * y.dim(3);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = std::min(active, o); ch < o; ++ch) {
      std::fill_n(y.data() + (s * o + ch) * plane, plane, 0.0f);
    }
  }
  return y;
}

Tensor conv2d_indexed(const Tensor& x, const Tensor& w, std::span<const std::size_t> idx, ConvGeometry geom) {
  if (w.rank() != 4) throw ShapeError("conv weight must be OIkk, got " + shape_str(w.shape()));
  if (idx.empty()) throw IndexError("indexed convolution needs at least one filter");
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= w.dim(0)) throw IndexError("filter index " + std::to_string(idx[i]) + " out of range");
    if (i > 0 && idx[i] <= idx[i - 1]) throw IndexError("filter indices must be strictly increasing");
  }
  const std::size_t filter = w.numel() / w.dim(0);
  Tensor gathered(Shape{idx.size(), w.dim(1), w.dim(2), w.dim(3)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(gathered.data() + i * filter, w.data() + idx[i] * filter, filter * sizeof(float));
  }
  return conv2d(x, gathered, geom);
}

Tensor relu(const Tensor& x) {
  Tensor y = Tensor::empty(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

Tensor tanh(const Tensor& x) {
  Tensor y = Tensor::empty(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor y = Tensor::empty(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

Tensor scale(const Tensor& x, float s) {
  Tensor y = Tensor::empty(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * s;
  return y;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax of rank-0 tensor");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  Tensor y = Tensor::empty(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * k;
    float* out = y.data() + r * k;
    const float mx = *std::max_element(in, in + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] = static_cast<float>(out[j] / sum);
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    const float* p = x.data() + i * plane;
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    y[i] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c(Shape{a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), 1.0f, a.data(), a.dim(1), b.data(), b.dim(1), 0.0f, c.data(),
       b.dim(1));
  return c;
}

double cross_entropy(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) throw ShapeError("cross_entropy: label count mismatch");
  const std::size_t k = probs.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) throw IndexError("label out of range");
    total -= std::log(std::max(static_cast<double>(probs[r * k + static_cast<std::size_t>(labels[r])]),
                               std::numeric_limits<double>::min()));
  }
  return total / static_cast<double>(labels.size());
}

double cross_entropy(const Tensor& probs, const Tensor& target) {
  if (probs.shape() != target.shape() || probs.rank() != 2) throw ShapeError("cross_entropy: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    if (target[i] != 0.0f) {
      total -= target[i] * std::log(std::max(static_cast<double>(probs[i]), std::numeric_limits<double>::min()));
    }
  }
  return total / static_cast<double>(probs.dim(0));
}

std::vector<int> argmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("argmax_rows expects [N,K], got " + shape_str(x.shape()));
  const std::size_t k = x.dim(1);
  std::vector<int> out(x.dim(0));
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    const float* row = x.data() + r * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace dsnet
