// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dsnet/ops.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet::ad {

/// A persistent trainable tensor plus its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  /// Whether the optimizer applies weight decay to this tensor.
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool weight_decay = true)
      : name(std::move(n)), value(std::move(v)), decay(weight_decay) {}

  void zero_grad();
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records one forward pass. Nodes are kept in creation order and `backward`
/// walks them in exact reverse order, so the tape is a DAG by construction.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf that receives a gradient (inputs under test, free variables).
  Var variable(Tensor value);
  /// Leaf bound to a parameter; backward adds into `p.grad`. Frozen parameters
  /// (trainable == false) behave like constants.
  Var param(Parameter& p);

  /// Appends an op result. `fn` runs during backward only if some input requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient reached so far; zeros if nothing flowed into `v`.
  Tensor grad(Var v) const;
  /// Mutable, zero-initialized gradient buffer of `v`, for backward rules.
  Tensor& grad_buffer(Var v);
  /// grad(v) += g. No-op when `v` does not require grad.
  void accumulate(Var v, const Tensor& g);
  /// Adopts `g` as the gradient buffer when none exists yet. Only pass
  /// freshly allocated tensors nobody else references.
  void accumulate(Var v, Tensor&& g);

  /// Reverse sweep from a scalar loss. Throws ContractError for non-scalar losses.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

// Elementwise arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_scalar(Var a, float s);
Var square(Var a);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);

/// Zero-copy prefix of the leading axis; the gradient lands in the first k slabs only.
Var slice_leading(Var t, std::size_t k);

/// [M,K] x [K,N].
Var matmul(Var a, Var b);
/// x [B, in] against W[:out, :in] of a [out_max, in_max] weight, plus optional sliced bias.
Var linear(Var x, Var w, std::size_t out, Var bias = {});
/// Convolution against W[:out, :x.C] of an OIkk weight, plus optional sliced bias.
Var conv2d(Var x, Var w, std::size_t out, ConvGeometry geom, Var bias = {});

/// x [N,C,H,W] times s [N,C] broadcast over space (attention, channel masks).
Var channel_scale(Var x, Var s);
Var global_avg_pool(Var x);

/// Group norm with a fixed number of channels per group. gamma/beta may be
/// longer than C; their first C entries are used.
Var group_norm(Var x, Var gamma, Var beta, std::size_t group_size, float eps = 1e-5f);

struct BatchStats {
  Tensor mean;
  Tensor var;
};
/// Batch norm using statistics of the current batch. Biased batch variance is
/// written to `observed` when given.
Var batch_norm(Var x, Var gamma, Var beta, BatchStats* observed = nullptr, float eps = 1e-5f);
/// Batch norm with fixed statistics of shape [C] (shared) or [N,C] (per sample).
Var batch_norm_fixed(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var, float eps = 1e-5f);

Var softmax(Var x);
Var log_softmax(Var x);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);
/// Mean over rows of -sum(target * log softmax(logits)); target is treated as a constant.
Var soft_cross_entropy(Var logits, const Tensor& target);
/// Mean over rows of -sum(target * log(probs)) for already-normalized probabilities.
Var prob_cross_entropy(Var probs, const Tensor& target);

/// Hard one-hot of argmax(scores + noise) per row, lowest index on ties.
/// Backward uses the jacobian of softmax((scores + noise) / tau). `noise` may be
/// undefined (evaluation) or a tensor of the same shape (Gumbel samples).
Var straight_through_argmax(Var scores, float tau, const Tensor& noise = {});

}  // namespace dsnet::ad
