#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "flowcp/data.hpp"

namespace flowcp::data {

/// Which columns of a delimited text file are features and which the target.
/// With header=false, column names are 1-based indices ("1", "2", ...).
struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string target_column;
  char delimiter = ',';
  bool header = true;
};

/// Reads a schema from JSON: {"features": [...], "target": "...",
/// "delimiter": ",", "header": true}.
CsvSchema load_schema(const std::string& path);

struct CsvLoadResult {
  Dataset dataset;       // raw values; standardize after splitting
  std::size_t dropped_rows = 0;  // rows with a missing/non-numeric required cell
};

/// Parses the file, drops (and counts) rows whose required cells are missing
/// or non-numeric, and never emits non-finite values. Throws IngestionError
/// for a missing column or when no usable rows remain.
CsvLoadResult load_csv(const std::string& path, const CsvSchema& schema);

}  // namespace flowcp::data
