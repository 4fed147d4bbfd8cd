// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dsnet::experiment {

/// Append-only CSV file. Every row is flushed as it is written, so a reader
/// can parse the file while the run is still going.
class CsvLog {
 public:
  CsvLog(const std::filesystem::path& path, std::vector<std::string> header);

  /// Numbers are printed with 17 significant digits. Throws ContractError when
  /// the cell count does not match the header.
  void row(const std::vector<std::string>& cells);
  std::size_t rows() const { return rows_; }

  static std::string num(double v);
  static std::string num(std::size_t v) { return std::to_string(v); }

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t rows_ = 0;
};

/// Header plus rows of a CSV file written by CsvLog.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws FormatError if absent.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Writes `json_text` to `path` atomically (temp file + rename).
void write_sidecar(const std::filesystem::path& path, const std::string& json_text);

}  // namespace dsnet::experiment
