// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dsnet/tensor.hpp"

namespace dsnet {

/// Seeded generator shared by initialization, sampling and Gumbel noise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in the open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = std::generate_canonical<double, 53>(engine_);
    } while (u <= 0.0 || u >= 1.0);
    return u;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller keeps the stream identical across standard libraries.
    const double u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  double gumbel() { return -std::log(-std::log(uniform())); }

  Tensor normal_tensor(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = static_cast<float>(normal(0.0, stddev));
    return t;
  }

  Tensor gumbel_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = static_cast<float>(gumbel());
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dsnet
