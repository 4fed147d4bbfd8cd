// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference cases covering every differentiable op, shared by the
// unit tests and the acceptance binary.

#pragma once

#include <string>
#include <vector>

#include "oracles.hpp"

namespace oracle {

struct GradCase {
  std::string name;
  ScalarFn fn;
  std::vector<dsnet::Tensor> inputs;
};

/// Every case keeps its inputs at or below 128 elements in total.
std::vector<GradCase> gradient_suite();

}  // namespace oracle
