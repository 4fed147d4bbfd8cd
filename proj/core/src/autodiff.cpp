// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dsnet/errors.hpp"

namespace dsnet::ad {

void Parameter::zero_grad() {
  if (!grad.defined() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0f);
  }
}

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unset Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, grad_enabled_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  const bool rg = grad_enabled_ && p.trainable;
  Backward fn;
  if (rg) {
    Parameter* target = &p;
    fn = [target](Tape&, const Tensor& g) {
      if (!target->grad.defined() || target->grad.shape() != target->value.shape()) target->zero_grad();
      float* dst = target->grad.data();
      const float* src = g.data();
      for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
    };
  }
  nodes_.push_back(Node{p.value, {}, rg, std::move(fn)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  bool rg = false;
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (v.valid() && v.tape() != this) throw ContractError("op mixes Vars from different tapes");
      rg = rg || (v.valid() && v.requires_grad());
    }
  }
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(fn) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.defined() ? n.grad : Tensor(n.value.shape());
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.grad.defined()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(Var v, Tensor&& g) {
  if (!v.valid() || !requires_grad(v)) return;
  Node& n = nodes_[v.id()];
  if (n.grad.defined() || g.shares_storage(n.value) || g.storage_offset() != 0) {
    accumulate(v, static_cast<const Tensor&>(g));
    return;
  }
  if (g.numel() != n.value.numel()) throw ShapeError("gradient shape does not match value shape");
  n.grad = std::move(g).reshaped(n.value.shape());
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!v.valid() || !requires_grad(v)) return;
  Node& n = nodes_[v.id()];
  if (g.numel() != n.value.numel()) throw ShapeError("gradient shape does not match value shape");
  if (!n.grad.defined()) {
    n.grad = g.clone().reshaped(n.value.shape());
    return;
  }
  float* dst = n.grad.data();
  const float* src = g.data();
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.tape() != this) throw ContractError("loss is not on this tape");
  if (value(loss).numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
  }
  if (!requires_grad(loss)) return;
  grad_buffer(loss).fill(1.0f);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || !n.grad.defined()) continue;
    // Copy the handle: the callback may grow the deque's grads of earlier nodes.
    Tensor g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw ContractError("op applied to an unset Var");
  return *v.tape();
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor y = Tensor::empty(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return y;
}

void check_finite(const Tensor& t, const char* op) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (std::isnan(t[i])) throw NumericError(std::string(op) + ": NaN input");
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tape& t = tape_of(a);
  Tensor y = dsnet::add(a.value(), b.value());
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] - bv[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    if (b.requires_grad()) tp.accumulate(b, dsnet::scale(g, -1.0f));
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tape& t = tape_of(a);
  const Tensor av = a.value();
  const Tensor bv = b.value();
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  return t.record(std::move(y), {a, b}, [a, b, av, bv](Tape& tp, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga = Tensor::empty(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * bv[i];
      tp.accumulate(a, std::move(ga));
    }
    if (b.requires_grad()) {
      Tensor gb = Tensor::empty(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] = g[i] * av[i];
      tp.accumulate(b, std::move(gb));
    }
  });
}

Var scale(Var a, float s) {
  Tape& t = tape_of(a);
  return t.record(dsnet::scale(a.value(), s), {a},
                  [a, s](Tape& tp, const Tensor& g) { tp.accumulate(a, dsnet::scale(g, s)); });
}

Var add_scalar(Var a, float s) {
  Tape& t = tape_of(a);
  return t.record(map(a.value(), [s](float v) { return v + s; }), {a},
                  [a](Tape& tp, const Tensor& g) { tp.accumulate(a, g); });
}

Var square(Var a) {
  Tape& t = tape_of(a);
  const Tensor av = a.value();
  return t.record(map(av, [](float v) { return v * v; }), {a}, [a, av](Tape& tp, const Tensor& g) {
    Tensor ga = Tensor::empty(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = 2.0f * av[i] * g[i];
    tp.accumulate(a, std::move(ga));
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor y = dsnet::relu(a.value());
  const Tensor yv = y;
  return t.record(std::move(y), {a}, [a, yv](Tape& tp, const Tensor& g) {
    Tensor ga = Tensor::empty(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = yv[i] > 0.0f ? g[i] : 0.0f;
    tp.accumulate(a, std::move(ga));
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor y = dsnet::tanh(a.value());
  const Tensor yv = y;
  return t.record(std::move(y), {a}, [a, yv](Tape& tp, const Tensor& g) {
    Tensor ga = Tensor::empty(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * (1.0f - yv[i] * yv[i]);
    tp.accumulate(a, std::move(ga));
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor y = map(a.value(), [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
  const Tensor yv = y;
  return t.record(std::move(y), {a}, [a, yv](Tape& tp, const Tensor& g) {
    Tensor ga = Tensor::empty(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * yv[i] * (1.0f - yv[i]);
    tp.accumulate(a, std::move(ga));
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  const Tensor av = a.value();
  return t.record(map(av, [](float v) { return std::log(v); }), {a}, [a, av](Tape& tp, const Tensor& g) {
    Tensor ga = Tensor::empty(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] / av[i];
    tp.accumulate(a, std::move(ga));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (float v : a.value().values()) s += v;
  const Shape shape = a.shape();
  return t.record(Tensor::scalar(static_cast<float>(s)), {a},
                  [a, shape](Tape& tp, const Tensor& g) { tp.accumulate(a, Tensor(shape, g[0])); });
}

Var mean(Var a) {
  const auto n = static_cast<float>(a.value().numel());
  return scale(sum(a), 1.0f / n);
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  return t.record(a.value().reshaped(std::move(shape)), {a},
                  [a](Tape& tp, const Tensor& g) {
                    const Tensor view = g.reshaped(a.shape());
                    tp.accumulate(a, view);
                  });
}

Var slice_leading(Var a, std::size_t k) {
  Tape& t = tape_of(a);
  Tensor view = slice_channels(a.value(), k);
  return t.record(std::move(view), {a}, [a](Tape& tp, const Tensor& g) {
    if (!a.requires_grad()) return;
    float* dst = tp.grad_buffer(a).data();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor av = a.value();
  const Tensor bv = b.value();
  Tensor y = dsnet::matmul(av, bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  return t.record(std::move(y), {a, b}, [a, b, av, bv, m, k, n](Tape& tp, const Tensor& g) {
    if (a.requires_grad()) {
      gemm(false, true, m, k, n, 1.0f, g.data(), n, bv.data(), n, 1.0f, tp.grad_buffer(a).data(), k);
    }
    if (b.requires_grad()) {
      gemm(true, false, k, n, m, 1.0f, av.data(), k, g.data(), n, 1.0f, tp.grad_buffer(b).data(), n);
    }
  });
}

Var linear(Var x, Var w, std::size_t out, Var bias) {
  Tape& t = tape_of(x);
  const Tensor xv = x.value();
  const Tensor wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2) throw ShapeError("linear expects [B,in] input and [out,in] weight");
  const std::size_t batch = xv.dim(0), in = xv.dim(1), in_max = wv.dim(1);
  if (in > in_max) throw ShapeError("linear input width " + std::to_string(in) + " exceeds weight " + shape_str(wv.shape()));
  if (out == 0 || out > wv.dim(0)) throw SliceError("linear output slice " + std::to_string(out) + " of " + shape_str(wv.shape()));
  Tensor y = Tensor::empty(Shape{batch, out});
  gemm(false, true, batch, out, in, 1.0f, xv.data(), in, wv.data(), in_max, 0.0f, y.data(), out);
  Tensor bv;
  if (bias.valid()) {
    bv = bias.value();
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t o = 0; o < out; ++o) y[r * out + o] += bv[o];
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  return t.record(std::move(y), inputs, [x, w, bias, xv, wv, batch, in, in_max, out](Tape& tp, const Tensor& g) {
    if (x.requires_grad()) {
      gemm(false, false, batch, in, out, 1.0f, g.data(), out, wv.data(), in_max, 1.0f, tp.grad_buffer(x).data(), in);
    }
    if (w.requires_grad()) {
      gemm(true, false, out, in, batch, 1.0f, g.data(), out, xv.data(), in, 1.0f, tp.grad_buffer(w).data(), in_max);
    }
    if (bias.valid() && bias.requires_grad()) {
      float* gb = tp.grad_buffer(bias).data();
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
      }
    }
  });
}

Var conv2d(Var x, Var w, std::size_t out, ConvGeometry geom, Var bias) {
  Tape& t = tape_of(x);
  const Tensor xv = x.value();
  const Tensor wv = w.value();
  if (xv.rank() != 4) throw ShapeError("conv2d expects NCHW input, got " + shape_str(xv.shape()));
  const std::size_t kernel = wv.dim(2);
  const MatrixView block = weight_block(wv, out, xv.dim(1));
  const std::size_t n = xv.dim(0);
  const std::size_t oh = conv_out_extent(xv.dim(2), kernel, geom);
  const std::size_t ow = conv_out_extent(xv.dim(3), kernel, geom);
  const std::size_t plane = oh * ow;
  const std::size_t cols = n * plane;
  Tensor col = im2col(xv, kernel, geom);
  Tensor tmp = Tensor::empty(Shape{out * cols});
  gemm(false, false, out, cols, block.cols, 1.0f, block.data, block.ld, col.data(), cols, 0.0f, tmp.data(), cols);
  Tensor y = Tensor::empty(Shape{n, out, oh, ow});
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t s = 0; s < n; ++s) {
      std::memcpy(y.data() + (s * out + o) * plane, tmp.data() + (o * n + s) * plane, plane * sizeof(float));
    }
  }
  if (bias.valid()) {
    const Tensor& bv = bias.value();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        float* p = y.data() + (s * out + o) * plane;
        for (std::size_t j = 0; j < plane; ++j) p[j] += bv[o];
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  const bool need_col = w.requires_grad();
  if (!need_col) col = Tensor();
  return t.record(std::move(y), inputs,
                  [x, w, bias, col, block, kernel, geom, n, out, plane, cols](Tape& tp, const Tensor& g) {
                    Tensor gt = Tensor::empty(Shape{out * cols});
                    for (std::size_t o = 0; o < out; ++o) {
                      for (std::size_t s = 0; s < n; ++s) {
                        std::memcpy(gt.data() + (o * n + s) * plane, g.data() + (s * out + o) * plane,
                                    plane * sizeof(float));
                      }
                    }
                    if (w.requires_grad()) {
                      gemm(false, true, out, block.cols, cols, 1.0f, gt.data(), cols, col.data(), cols, 1.0f,
                           tp.grad_buffer(w).data(), block.ld);
                    }
                    if (x.requires_grad()) {
                      Tensor dcol = Tensor::empty(Shape{block.cols * cols});
                      gemm(true, false, block.cols, cols, out, 1.0f, block.data, block.ld, gt.data(), cols, 0.0f,
                           dcol.data(), cols);
                      col2im_add(dcol.data(), tp.grad_buffer(x), kernel, geom);
                    }
                    if (bias.valid() && bias.requires_grad()) {
                      float* gb = tp.grad_buffer(bias).data();
                      for (std::size_t o = 0; o < out; ++o) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) s += gt[o * cols + j];
                        gb[o] += static_cast<float>(s);
                      }
                    }
                  });
}

Var channel_scale(Var x, Var s) {
  Tape& t = tape_of(x);
  const Tensor xv = x.value();
  const Tensor sv = s.value();
  if (xv.rank() != 4 || sv.rank() != 2 || sv.dim(0) != xv.dim(0) || sv.dim(1) != xv.dim(1)) {
    throw ShapeError("channel_scale: x " + shape_str(xv.shape()) + " vs s " + shape_str(sv.shape()));
  }
  const std::size_t nc = sv.numel(), plane = xv.dim(2) * xv.dim(3);
  Tensor y = Tensor::empty(xv.shape());
  for (std::size_t i = 0; i < nc; ++i) {
    const float f = sv[i];
    const float* src = xv.data() + i * plane;
    float* dst = y.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] * f;
  }
  return t.record(std::move(y), {x, s}, [x, s, xv, sv, nc, plane](Tape& tp, const Tensor& g) {
    if (x.requires_grad()) {
      float* gx = tp.grad_buffer(x).data();
      for (std::size_t i = 0; i < nc; ++i) {
        const float f = sv[i];
        for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += g[i * plane + j] * f;
      }
    }
    if (s.requires_grad()) {
      float* gs = tp.grad_buffer(s).data();
      for (std::size_t i = 0; i < nc; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += static_cast<double>(g[i * plane + j]) * xv[i * plane + j];
        gs[i] += static_cast<float>(acc);
      }
    }
  });
}

Var global_avg_pool(Var x) {
  Tape& t = tape_of(x);
  const Shape shape = x.shape();
  Tensor y = dsnet::global_avg_pool(x.value());
  return t.record(std::move(y), {x}, [x, shape](Tape& tp, const Tensor& g) {
    const std::size_t plane = shape[2] * shape[3];
    const float inv = 1.0f / static_cast<float>(plane);
    float* gx = tp.grad_buffer(x).data();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const float v = g[i] * inv;
      for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += v;
    }
  });
}

namespace {

// Shared backward for normalization layers where groups are contiguous runs of
// `group_len` elements. `xhat` is the normalized input, `rstd` one per group.
// Blocked float sums with a double total; the lanes let the compiler vectorize.
double lane_sum(const float* p, std::size_t n, float shift) {
  constexpr std::size_t kLanes = 16;
  float acc[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += p[j + l] - shift;
  }
  double total = 0.0;
  for (float a : acc) total += a;
  for (; j < n; ++j) total += p[j] - shift;
  return total;
}

double lane_sum_sq(const float* p, std::size_t n, float shift) {
  constexpr std::size_t kLanes = 16;
  float acc[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const float d = p[j + l] - shift;
      acc[l] += d * d;
    }
  }
  double total = 0.0;
  for (float a : acc) total += a;
  for (; j < n; ++j) total += static_cast<double>(p[j] - shift) * (p[j] - shift);
  return total;
}

double lane_dot(const float* a, const float* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  float acc[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[j + l] * b[j + l];
  }
  double total = 0.0;
  for (float v : acc) total += v;
  for (; j < n; ++j) total += static_cast<double>(a[j]) * b[j];
  return total;
}

// Shared backward of group and batch norm. Statistics groups are indexed per
// (sample, channel) plane: group_size > 0 pools `group_size` channels of one
// sample, group_size == 0 pools one channel across the batch.
void norm_backward(Tape& tp, Var x, Var gamma, Var beta, const Tensor& g, const Tensor& xhat,
                   const std::vector<float>& rstd, std::size_t n, std::size_t c, std::size_t plane,
                   std::size_t group_size, std::size_t group_count) {
  const Tensor& gv = gamma.value();
  const std::size_t groups = rstd.size();
  auto group_of = [&](std::size_t s, std::size_t ch) {
    return group_size ? s * (c / group_size) + ch / group_size : ch;
  };
  float* gg = gamma.requires_grad() ? tp.grad_buffer(gamma).data() : nullptr;
  float* gb = beta.requires_grad() ? tp.grad_buffer(beta).data() : nullptr;
  const bool need_x = x.requires_grad();
  std::vector<double> sum_d(groups, 0.0), sum_dx(groups, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* gp = g.data() + (s * c + ch) * plane;
      const float* xp = xhat.data() + (s * c + ch) * plane;
      const double sg = lane_sum(gp, plane, 0.0f);
      const double sgx = lane_dot(gp, xp, plane);
      if (gg) gg[ch] += static_cast<float>(sgx);
      if (gb) gb[ch] += static_cast<float>(sg);
      const std::size_t grp = group_of(s, ch);
      sum_d[grp] += sg * gv[ch];
      sum_dx[grp] += sgx * gv[ch];
    }
  }
  if (!need_x) return;
  float* gx = tp.grad_buffer(x).data();
  const double m = static_cast<double>(group_count);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t grp = group_of(s, ch);
      const float a = static_cast<float>(rstd[grp] * gv[ch]);
      const float b = static_cast<float>(rstd[grp] * sum_d[grp] / m);
      const float d = static_cast<float>(rstd[grp] * sum_dx[grp] / m);
      const std::size_t base = (s * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) gx[base + j] += a * g[base + j] - b - xhat[base + j] * d;
    }
  }
}

void check_affine(const Var& x, const Var& gamma, const Var& beta, const char* op) {
  if (x.value().rank() != 4) throw ShapeError(std::string(op) + " expects NCHW, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(1);
  if (gamma.value().numel() < c || beta.value().numel() < c) {
    throw ShapeError(std::string(op) + ": affine parameters shorter than channel count");
  }
}

}  // namespace

Var group_norm(Var x, Var gamma, Var beta, std::size_t group_size, float eps) {
  check_affine(x, gamma, beta, "group_norm");
  Tape& t = tape_of(x);
  const Tensor xv = x.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (group_size == 0 || c % group_size != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible by group size " +
                      std::to_string(group_size));
  }
  const std::size_t groups_per_sample = c / group_size;
  const std::size_t groups = n * groups_per_sample;
  const std::size_t group_len = group_size * plane;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat = Tensor::empty(xv.shape());
  Tensor y = Tensor::empty(xv.shape());
  std::vector<float> rstd(groups);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const float* src = xv.data() + grp * group_len;
    const double mu = lane_sum(src, group_len, 0.0f) / static_cast<double>(group_len);
    const double var = lane_sum_sq(src, group_len, static_cast<float>(mu)) / static_cast<double>(group_len);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[grp] = static_cast<float>(r);
    const float fmu = static_cast<float>(mu);
    const float fr = static_cast<float>(r);
    for (std::size_t k = 0; k < group_size; ++k) {
      const std::size_t ch = (grp % groups_per_sample) * group_size + k;
      const std::size_t base = grp * group_len + k * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const float xh = (xv[base + j] - fmu) * fr;
        xhat[base + j] = xh;
        y[base + j] = gv[ch] * xh + bv[ch];
      }
    }
  }
  return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, rstd, n, c, plane, group_size, group_len](Tape& tp, const Tensor& g) {
    norm_backward(tp, x, gamma, beta, g, xhat, rstd, n, c, plane, group_size, group_len);
  });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchStats* observed, float eps) {
  check_affine(x, gamma, beta, "batch_norm");
  Tape& t = tape_of(x);
  const Tensor xv = x.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  const std::size_t count = n * plane;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* p = xv.data() + (s * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) mu[ch] += p[j];
    }
  }
  for (auto& m : mu) m /= static_cast<double>(count);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* p = xv.data() + (s * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) var[ch] += (p[j] - mu[ch]) * (p[j] - mu[ch]);
    }
  }
  for (auto& v : var) v /= static_cast<double>(count);
  if (observed) {
    observed->mean = Tensor(Shape{c});
    observed->var = Tensor(Shape{c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      observed->mean[ch] = static_cast<float>(mu[ch]);
      observed->var[ch] = static_cast<float>(var[ch]);
    }
  }
  std::vector<float> rstd(c);
  for (std::size_t ch = 0; ch < c; ++ch) rstd[ch] = static_cast<float>(1.0 / std::sqrt(var[ch] + eps));
  Tensor xhat = Tensor::empty(xv.shape());
  Tensor y = Tensor::empty(xv.shape());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * plane;
      const float m = static_cast<float>(mu[ch]);
      for (std::size_t j = 0; j < plane; ++j) {
        const float xh = (xv[base + j] - m) * rstd[ch];
        xhat[base + j] = xh;
        y[base + j] = gv[ch] * xh + bv[ch];
      }
    }
  }
  return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, rstd, n, c, plane, count](Tape& tp, const Tensor& g) {
    norm_backward(tp, x, gamma, beta, g, xhat, rstd, n, c, plane, 0, count);
  });
}

Var batch_norm_fixed(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var, float eps) {
  check_affine(x, gamma, beta, "batch_norm_fixed");
  Tape& t = tape_of(x);
  const Tensor xv = x.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  const bool per_sample = mean.rank() == 2;
  const std::size_t stat_stride = per_sample ? mean.dim(1) : 0;
  if ((per_sample && (mean.dim(0) != n || stat_stride < c)) || (!per_sample && mean.numel() < c) ||
      var.shape() != mean.shape()) {
    throw ShapeError("batch_norm_fixed: statistics " + shape_str(mean.shape()) + " do not cover input " +
                     shape_str(xv.shape()));
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor scale_nc(Shape{n, c});
  Tensor y = Tensor::empty(xv.shape());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t si = per_sample ? s * stat_stride + ch : ch;
      const float r = 1.0f / std::sqrt(var[si] + eps);
      scale_nc[s * c + ch] = r;
      const float* p = xv.data() + (s * c + ch) * plane;
      float* q = y.data() + (s * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) q[j] = gv[ch] * (p[j] - mean[si]) * r + bv[ch];
    }
  }
  return t.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xv, mean, scale_nc, per_sample, stat_stride, c, plane](Tape& tp, const Tensor& g) {
                    const Tensor& gv = gamma.value();
                    float* gx = x.requires_grad() ? tp.grad_buffer(x).data() : nullptr;
                    float* gg = gamma.requires_grad() ? tp.grad_buffer(gamma).data() : nullptr;
                    float* gb = beta.requires_grad() ? tp.grad_buffer(beta).data() : nullptr;
                    for (std::size_t i = 0; i < g.numel(); ++i) {
                      const std::size_t nc = i / plane;
                      const std::size_t ch = nc % c;
                      const std::size_t si = per_sample ? (nc / c) * stat_stride + ch : ch;
                      const float r = scale_nc[nc];
                      if (gx) gx[i] += g[i] * gv[ch] * r;
                      if (gg) gg[ch] += g[i] * (xv[i] - mean[si]) * r;
                      if (gb) gb[ch] += g[i];
                    }
                  });
}

Var softmax(Var x) {
  Tape& t = tape_of(x);
  Tensor y = dsnet::softmax(x.value());
  const Tensor yv = y;
  return t.record(std::move(y), {x}, [x, yv](Tape& tp, const Tensor& g) {
    const std::size_t k = yv.shape().back();
    const std::size_t rows = yv.numel() / k;
    Tensor gx(yv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(g[r * k + j]) * yv[r * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[r * k + j] = static_cast<float>(yv[r * k + j] * (g[r * k + j] - dot));
    }
    tp.accumulate(x, std::move(gx));
  });
}

namespace {
Tensor log_softmax_values(const Tensor& x) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  Tensor y = Tensor::empty(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * k;
    const float mx = *std::max_element(in, in + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(in[j] - mx));
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) y[r * k + j] = static_cast<float>(in[j] - lse);
  }
  return y;
}
}  // namespace

Var log_softmax(Var x) {
  Tape& t = tape_of(x);
  Tensor y = log_softmax_values(x.value());
  const Tensor yv = y;
  return t.record(std::move(y), {x}, [x, yv](Tape& tp, const Tensor& g) {
    const std::size_t k = yv.shape().back();
    const std::size_t rows = yv.numel() / k;
    Tensor gx(yv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < k; ++j) gs += g[r * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        gx[r * k + j] = static_cast<float>(g[r * k + j] - std::exp(static_cast<double>(yv[r * k + j])) * gs);
      }
    }
    tp.accumulate(x, std::move(gx));
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) throw ShapeError("cross_entropy: label count mismatch");
  const std::size_t rows = lv.dim(0), k = lv.dim(1);
  Tensor target(lv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) throw IndexError("label out of range");
    target[r * k + static_cast<std::size_t>(labels[r])] = 1.0f;
  }
  return soft_cross_entropy(logits, target);
}

Var soft_cross_entropy(Var logits, const Tensor& target) {
  Tape& t = tape_of(logits);
  const Tensor lv = logits.value();
  if (lv.rank() != 2 || target.shape() != lv.shape()) {
    throw ShapeError("soft_cross_entropy: logits " + shape_str(lv.shape()) + " vs target " + shape_str(target.shape()));
  }
  const Tensor logp = log_softmax_values(lv);
  const std::size_t rows = lv.dim(0), k = lv.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < logp.numel(); ++i) {
    if (target[i] != 0.0f) total -= static_cast<double>(target[i]) * logp[i];
  }
  const Tensor tv = target;
  return t.record(Tensor::scalar(static_cast<float>(total / static_cast<double>(rows))), {logits},
                  [logits, logp, tv, rows, k](Tape& tp, const Tensor& g) {
                    Tensor gx(logp.shape());
                    const double scale = g[0] / static_cast<double>(rows);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double tsum = 0.0;
                      for (std::size_t j = 0; j < k; ++j) tsum += tv[r * k + j];
                      for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t i = r * k + j;
                        gx[i] = static_cast<float>(scale * (std::exp(static_cast<double>(logp[i])) * tsum - tv[i]));
                      }
                    }
                    tp.accumulate(logits, std::move(gx));
                  });
}

Var prob_cross_entropy(Var probs, const Tensor& target) {
  Tape& t = tape_of(probs);
  const Tensor pv = probs.value();
  if (pv.rank() != 2 || target.shape() != pv.shape()) throw ShapeError("prob_cross_entropy: shape mismatch");
  const std::size_t rows = pv.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    if (target[i] != 0.0f) total -= static_cast<double>(target[i]) * std::log(static_cast<double>(pv[i]));
  }
  const Tensor tv = target;
  return t.record(Tensor::scalar(static_cast<float>(total / static_cast<double>(rows))), {probs},
                  [probs, pv, tv, rows](Tape& tp, const Tensor& g) {
                    Tensor gp(pv.shape());
                    for (std::size_t i = 0; i < pv.numel(); ++i) {
                      gp[i] = tv[i] == 0.0f ? 0.0f : static_cast<float>(-g[0] * tv[i] / (pv[i] * static_cast<double>(rows)));
                    }
                    tp.accumulate(probs, std::move(gp));
                  });
}

Var straight_through_argmax(Var scores, float tau, const Tensor& noise) {
  Tape& t = tape_of(scores);
  const Tensor sv = scores.value();
  check_finite(sv, "straight_through_argmax");
  if (sv.rank() != 2) throw ShapeError("straight_through_argmax expects [N,g], got " + shape_str(sv.shape()));
  if (!(tau > 0.0f)) throw ConfigError("gumbel temperature must be positive");
  if (noise.defined() && noise.shape() != sv.shape()) throw ShapeError("gumbel noise shape mismatch");
  Tensor perturbed = sv.clone();
  if (noise.defined()) {
    for (std::size_t i = 0; i < perturbed.numel(); ++i) perturbed[i] += noise[i];
  }
  const std::size_t k = sv.dim(1);
  Tensor hard(sv.shape());
  const std::vector<int> idx = argmax_rows(perturbed);
  for (std::size_t r = 0; r < idx.size(); ++r) hard[r * k + static_cast<std::size_t>(idx[r])] = 1.0f;
  return t.record(std::move(hard), {scores}, [scores, perturbed, tau, k](Tape& tp, const Tensor& g) {
    const Tensor soft = dsnet::softmax(dsnet::scale(perturbed, 1.0f / tau));
    const std::size_t rows = soft.numel() / k;
    Tensor gs(soft.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(g[r * k + j]) * soft[r * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        gs[r * k + j] = static_cast<float>(soft[r * k + j] * (g[r * k + j] - dot) / tau);
      }
    }
    tp.accumulate(scores, std::move(gs));
  });
}

}  // namespace dsnet::ad
