#include "flowcp/csv.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowcp/errors.hpp"

namespace flowcp::data {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, delim)) cells.push_back(cell);
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::optional<double> parse_cell(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

CsvSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IngestionError("cannot parse schema " + path + ": " + e.what());
  }
  CsvSchema schema;
  schema.feature_columns = j.at("features").get<std::vector<std::string>>();
  schema.target_column = j.at("target").get<std::string>();
  if (j.contains("delimiter")) {
    const auto d = j.at("delimiter").get<std::string>();
    if (d.size() != 1) throw IngestionError("schema delimiter must be a single character");
    schema.delimiter = d[0];
  }
  schema.header = j.value("header", true);
  if (schema.feature_columns.empty()) throw IngestionError("schema lists no feature columns");
  return schema;
}

CsvLoadResult load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);

  std::string line;
  std::vector<std::size_t> feature_idx;
  std::size_t target_idx = 0;

  if (schema.header) {
    if (!std::getline(in, line)) throw IngestionError(path + ": empty file");
    const auto names = split_line(line, schema.delimiter);
    auto find = [&](const std::string& name) -> std::size_t {
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (trim(names[i]) == name) return i;
      }
      throw IngestionError(path + ": column '" + name + "' not found");
    };
    for (const auto& f : schema.feature_columns) feature_idx.push_back(find(f));
    target_idx = find(schema.target_column);
  } else {
    auto parse_index = [&](const std::string& name) -> std::size_t {
      try {
        const auto idx = std::stoul(name);
        if (idx == 0) throw std::out_of_range("1-based");
        return idx - 1;
      } catch (const std::exception&) {
        throw IngestionError(path + ": with header=false, columns must be 1-based indices, got '" +
                             name + "'");
      }
    };
    for (const auto& f : schema.feature_columns) feature_idx.push_back(parse_index(f));
    target_idx = parse_index(schema.target_column);
  }

  std::vector<double> xs;
  std::vector<double> ys;
  std::size_t dropped = 0;
  const std::size_t d = feature_idx.size();

  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_line(line, schema.delimiter);
    bool ok = true;
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d && ok; ++j) {
      if (feature_idx[j] >= cells.size()) {
        ok = false;
        break;
      }
      const auto v = parse_cell(cells[feature_idx[j]]);
      if (!v) {
        ok = false;
      } else {
        row[j] = *v;
      }
    }
    std::optional<double> y;
    if (ok) {
      y = target_idx < cells.size() ? parse_cell(cells[target_idx]) : std::nullopt;
      if (!y) ok = false;
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    xs.insert(xs.end(), row.begin(), row.end());
    ys.push_back(*y);
  }

  if (ys.empty()) throw IngestionError(path + ": no usable rows");

  CsvLoadResult result;
  result.dropped_rows = dropped;
  result.dataset.x = num::Tensor2(ys.size(), d, std::move(xs));
  result.dataset.y = std::move(ys);
  result.dataset.feature_names = schema.feature_columns;
  return result;
}

}  // namespace flowcp::data
