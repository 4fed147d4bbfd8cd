// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dsnet {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Prefix slice outside `(0, extent]`.
class SliceError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition (non-scalar loss, bad distribution, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Batch-norm statistics requested for a width that was never recalibrated.
class StatisticsError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace dsnet
