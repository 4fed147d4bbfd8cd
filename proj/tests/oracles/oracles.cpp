// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

using dsnet::Shape;
using dsnet::Tensor;

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != in) throw std::invalid_argument("channel mismatch");
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - k) / stride + 1;
  Tensor y(Shape{n, out, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < in; ++c) {
            for (std::size_t ki = 0; ki < k; ++ki) {
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long r = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x.at({b, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)})) *
                       w.at({o, c, ki, kj});
              }
            }
          }
          y.at({b, o, i, j}) = static_cast<float>(acc);
        }
      }
    }
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("inner dimension mismatch");
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<float>(acc);
    }
  }
  return c;
}

double scaled_max_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw std::invalid_argument("scaled_max_diff on tensors of different size");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - b[i]));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return scale > 0.0 ? diff / scale : diff;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
  if (a.numel() != b.numel()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i], y = b[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

double GradCheck::worst() const {
  return rel_error.empty() ? 0.0 : *std::max_element(rel_error.begin(), rel_error.end());
}

GradCheck check_gradients(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps) {
  std::vector<Tensor> work;
  for (const Tensor& t : inputs) work.push_back(t.clone());

  std::vector<Tensor> analytic;
  {
    dsnet::ad::Tape tape;
    std::vector<dsnet::ad::Var> leaves;
    for (const Tensor& t : work) leaves.push_back(tape.variable(t));
    dsnet::ad::Var loss = fn(tape, leaves);
    tape.backward(loss);
    for (const auto& v : leaves) analytic.push_back(tape.grad_buffer(v).clone());
  }

  auto eval = [&]() {
    dsnet::ad::Tape tape(false);
    std::vector<dsnet::ad::Var> leaves;
    for (const Tensor& t : work) leaves.push_back(tape.constant(t));
    return static_cast<double>(fn(tape, leaves).value().item());
  };

  GradCheck out;
  for (std::size_t t = 0; t < work.size(); ++t) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < work[t].numel(); ++i) {
      const float keep = work[t][i];
      work[t][i] = static_cast<float>(keep + eps);
      const double up = eval();
      work[t][i] = static_cast<float>(keep - eps);
      const double down = eval();
      work[t][i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    out.rel_error.push_back(std::sqrt(diff2) / scale);
  }
  return out;
}

std::size_t channels(double ratio, std::size_t base, std::size_t interval) {
  const double units = ratio * static_cast<double>(base) / static_cast<double>(interval);
  const auto rounded = static_cast<std::size_t>(std::floor(units + 0.5 + 1e-9));
  return std::max<std::size_t>(rounded, 1) * interval;
}

namespace {

struct Counter {
  std::size_t ops = 0;

  // One multiply-add per (output element, input channel, kernel tap).
  void conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, std::size_t& h,
            std::size_t& w) {
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (w + 2 * pad - k) / stride + 1;
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t c = 0; c < in; ++c)
            for (std::size_t t = 0; t < k * k; ++t) ++ops;
    h = oh;
    w = ow;
  }

  void linear(std::size_t in, std::size_t out) {
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t c = 0; c < in; ++c) ++ops;
  }
};

}  // namespace

std::size_t count_madds(const dsnet::SupernetConfig& cfg, const dsnet::PathDescriptor& path) {
  Counter count;
  std::size_t h = cfg.height, w = cfg.width;
  const std::size_t stem_pad = cfg.stem_kernel % 2 ? cfg.stem_kernel / 2 : 0;
  count.conv(cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride, stem_pad, h, w);

  std::size_t width = cfg.stem_channels;     // active channels entering the block
  std::size_t capacity = cfg.stem_channels;  // channels the block's weights are built for
  std::size_t gated_seen = 0;
  for (const dsnet::StageSpec& st : cfg.stages) {
    std::size_t out_max = st.channels;
    std::size_t out = st.channels;
    if (st.gated()) {
      out_max = channels(st.candidates.back(), st.channels, cfg.interval);
      out = channels(path.ratios.at(gated_seen), st.channels, cfg.interval);
    }
    for (std::size_t b = 0; b < st.blocks; ++b) {
      const std::size_t stride = b == 0 ? st.stride : 1;
      const bool residual = cfg.arch == dsnet::Architecture::Residual;
      // Residual blocks all carry a gate; the plain stack gates only the
      // first block of each gated stage.
      const bool gate = residual || (st.gated() && b == 0);
      if (gate) {
        const std::size_t d = std::max<std::size_t>(capacity / 16, 8);
        count.linear(width, d);  // shared reduction
        count.linear(d, width);  // attention head
        if (st.gated() && b == 0) {
          const std::size_t g = cfg.head_design == dsnet::HeadDesign::OneHot ? st.candidates.size() : 1;
          count.linear(d, g);
        }
      }
      std::size_t h1 = h, w1 = w;
      count.conv(width, out, 3, stride, 1, h1, w1);
      if (residual) {
        std::size_t h2 = h1, w2 = w1;
        count.conv(out, out, 3, 1, 1, h2, w2);
        if (b == 0) {
          std::size_t hp = h, wp = w;
          count.conv(width, out, 1, stride, 0, hp, wp);
        }
      }
      h = h1;
      w = w1;
      width = out;
      capacity = out_max;
    }
    if (st.gated()) ++gated_seen;
  }
  count.linear(width, cfg.classes);
  return count.ops;
}

}  // namespace oracle
