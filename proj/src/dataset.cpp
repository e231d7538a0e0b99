#include "subsetar/dataset.hpp"

#include "subsetar/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace subsetar {

void Dataset::add(const std::string& name, Eigen::VectorXd values) {
  if (!values.allFinite()) throw InvalidMatrix("column '" + name + "' has non-finite entries");
  if (!names_.empty() && values.size() != n_)
    throw InsufficientSample("column '" + name + "' has length " + std::to_string(values.size()) +
                             ", expected " + std::to_string(n_));
  if (has(name)) throw CsvFormatError("duplicate column '" + name + "'");
  n_ = values.size();
  names_.push_back(name);
  columns_.push_back(std::move(values));
}

bool Dataset::has(const std::string& name) const {
  for (const auto& existing : names_)
    if (existing == name) return true;
  return false;
}

const Eigen::VectorXd& Dataset::col(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return columns_[i];
  throw CsvFormatError("no column named '" + name + "'");
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    cells.push_back(cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvFormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw CsvFormatError("'" + path + "' is empty (header row required)");
  const std::vector<std::string> header = split_row(line);
  if (header.empty()) throw CsvFormatError("'" + path + "' has an empty header row");

  std::vector<std::vector<double>> data(header.size());
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_row(line);
    if (cells.size() != header.size())
      throw CsvFormatError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " cells, expected " + std::to_string(header.size()));
    for (size_t j = 0; j < cells.size(); ++j) {
      size_t consumed = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[j], &consumed);
      } catch (const std::exception&) {
        throw CsvFormatError("row " + std::to_string(row) + ": non-numeric cell '" + cells[j] + "'");
      }
      if (consumed != cells[j].size())
        throw CsvFormatError("row " + std::to_string(row) + ": non-numeric cell '" + cells[j] + "'");
      data[j].push_back(v);
    }
  }

  Dataset out;
  for (size_t j = 0; j < header.size(); ++j) {
    Eigen::VectorXd col(static_cast<long>(data[j].size()));
    for (long i = 0; i < col.size(); ++i) col(i) = data[j][static_cast<size_t>(i)];
    out.add(header[j], std::move(col));
  }
  return out;
}

std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace subsetar
