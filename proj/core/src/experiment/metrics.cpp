// Copyright 2026 The dsnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsnet/experiment/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "dsnet/errors.hpp"

namespace dsnet::experiment {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s;
}

}  // namespace

CsvLog::CsvLog(const std::filesystem::path& path, std::vector<std::string> header) : columns_(header.size()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  if (!out_) throw IoError("cannot write " + path.string());
  out_ << join(header) << '\n' << std::flush;
}

void CsvLog::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) {
    throw ContractError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(columns_));
  }
  out_ << join(cells) << '\n' << std::flush;
  if (!out_) throw IoError("csv write failed");
  ++rows_;
}

std::string CsvLog::num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("csv has no column '" + name + "'", 0);
  return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row).at(column(name));
  try {
    return std::stod(cell);
  } catch (const std::exception&) {
    throw FormatError("non-numeric cell '" + cell + "' in column " + name, 0);
  }
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty", 0);
  t.header = split(line);
  offset += line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw FormatError(path.string() + ": ragged row", offset);
    t.rows.push_back(std::move(cells));
    offset += line.size() + 1;
  }
  return t;
}

void write_sidecar(const std::filesystem::path& path, const std::string& json_text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << json_text;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace dsnet::experiment
