#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabfa/common.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

// Returns a description of the first domain violation, or nullopt for a valid row.
inline std::optional<std::string> validate_row(const Schema& schema, const Row& row) {
  if (row.size() != schema.size())
    return "row has " + std::to_string(row.size()) + " values, schema has " +
           std::to_string(schema.size()) + " features";
  for (size_t f = 0; f < schema.size(); ++f) {
    const auto& fs = schema.feature(f);
    double v = row[f];
    if (!std::isfinite(v)) return "feature '" + fs.name + "': non-finite value";
    if (fs.kind == FeatureKind::kCategorical) {
      double r = std::round(v);
      if (std::abs(v - r) > kValueTol || r < 0 || r >= static_cast<double>(fs.arity()))
        return "feature '" + fs.name + "': invalid category index " + std::to_string(v);
    } else {
      if (v < fs.lo - kValueTol || v > fs.hi + kValueTol)
        return "feature '" + fs.name + "': value " + std::to_string(v) +
               " outside [" + std::to_string(fs.lo) + ", " + std::to_string(fs.hi) + "]";
      if (fs.kind == FeatureKind::kOrdinal && std::abs(v - std::round(v)) > kValueTol)
        return "feature '" + fs.name + "': ordinal value " + std::to_string(v) +
               " is not an integer";
    }
  }
  return std::nullopt;
}

struct Dataset {
  Schema schema;
  std::vector<Row> rows;
  std::vector<int> labels;
};

struct Split {
  std::vector<size_t> train;
  std::vector<size_t> test;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline double parse_number(const std::string& cell, const std::string& feature, size_t line_no) {
  try {
    size_t pos = 0;
    double v = std::stod(cell, &pos);
    while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
    if (pos != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ", feature '" + feature +
                    "': cannot parse '" + cell + "' as a number");
  }
}

}  // namespace detail

// Comma-separated file with a header naming every schema feature plus the
// label column, in any column order. Extra or missing columns are errors.
inline Dataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset file '" + path + "' is empty");
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);

  std::vector<int> col_feature(header.size(), -1);
  int label_col = -1;
  std::vector<int> seen(schema.size(), 0);
  for (size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.label_name()) {
      if (label_col >= 0) throw DataError("duplicate label column '" + header[c] + "'");
      label_col = static_cast<int>(c);
      continue;
    }
    int f = schema.feature_index(header[c]);
    if (f < 0) throw DataError("column '" + header[c] + "' is not in the schema");
    if (seen[f]++) throw DataError("duplicate column '" + header[c] + "'");
    col_feature[c] = f;
  }
  if (label_col < 0) throw DataError("label column '" + schema.label_name() + "' not found");
  for (size_t f = 0; f < schema.size(); ++f)
    if (!seen[f]) throw DataError("column '" + schema.feature(f).name + "' missing from file");

  Dataset data;
  data.schema = schema;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    Row row(schema.size(), 0.0);
    for (size_t c = 0; c < cells.size(); ++c) {
      std::string cell = detail::trim(cells[c]);
      if (static_cast<int>(c) == label_col) continue;
      int f = col_feature[c];
      const auto& fs = schema.feature(f);
      if (fs.kind == FeatureKind::kCategorical) {
        int idx = schema.category_index(f, cell);
        if (idx < 0)
          throw DataError("line " + std::to_string(line_no) + ", feature '" + fs.name +
                          "': unknown category '" + cell + "'");
        row[f] = idx;
      } else {
        row[f] = detail::parse_number(cell, fs.name, line_no);
      }
    }
    if (auto problem = validate_row(schema, row))
      throw DataError("line " + std::to_string(line_no) + ": " + *problem);
    std::string label_cell = detail::trim(cells[label_col]);
    int y = schema.class_index(label_cell);
    if (y < 0)
      throw DataError("line " + std::to_string(line_no) + ": unknown class '" + label_cell + "'");
    data.rows.push_back(std::move(row));
    data.labels.push_back(y);
  }
  if (data.rows.empty()) throw DataError("dataset file '" + path + "' has no data rows");
  return data;
}

inline void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset file '" + path + "'");
  const auto& schema = data.schema;
  for (size_t f = 0; f < schema.size(); ++f) out << schema.feature(f).name << ',';
  out << schema.label_name() << '\n';
  out.precision(17);
  for (size_t i = 0; i < data.rows.size(); ++i) {
    for (size_t f = 0; f < schema.size(); ++f) {
      const auto& fs = schema.feature(f);
      if (fs.kind == FeatureKind::kCategorical)
        out << fs.categories[static_cast<size_t>(std::llround(data.rows[i][f]))];
      else
        out << data.rows[i][f];
      out << ',';
    }
    out << schema.classes()[static_cast<size_t>(data.labels[i])] << '\n';
  }
}

inline Split make_split(size_t n, double test_fraction, uint64_t seed) {
  if (n == 0) throw ConfigError("cannot split an empty dataset");
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("test fraction must be in [0, 1)");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(seed, /*stream=*/0x590117);
  std::shuffle(idx.begin(), idx.end(), rng);
  size_t n_test = static_cast<size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test >= n) n_test = n - 1;
  Split split;
  split.test.assign(idx.begin(), idx.begin() + n_test);
  split.train.assign(idx.begin() + n_test, idx.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

inline void save_split(const std::string& path, const Split& split) {
  nlohmann::json j{{"train", split.train}, {"test", split.test}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write split file '" + path + "'");
  out << j.dump() << "\n";
}

inline Split load_split(const std::string& path, size_t n) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open split file '" + path + "'");
  nlohmann::json j;
  in >> j;
  Split split;
  split.train = j.at("train").get<std::vector<size_t>>();
  split.test = j.at("test").get<std::vector<size_t>>();
  std::vector<int> seen(n, 0);
  for (size_t i : split.train) {
    if (i >= n || seen[i]++) throw ConfigError("split file: bad or repeated train index");
  }
  for (size_t i : split.test) {
    if (i >= n || seen[i]++) throw ConfigError("split file: bad or repeated test index");
  }
  return split;
}

template <typename T>
inline std::vector<T> gather(const std::vector<T>& items, const std::vector<size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(items.at(i));
  return out;
}

// Standardization factors R: the observed value range of each ordered feature
// over the given rows (typically the training split). Categorical entries and
// constant features get 0; attacks treat zero-range features as immutable.
inline std::vector<double> range_sizes(const Schema& schema, const std::vector<Row>& rows) {
  if (rows.empty()) throw ConfigError("range_sizes needs at least one row");
  std::vector<double> r(schema.size(), 0.0);
  for (size_t f = 0; f < schema.size(); ++f) {
    if (!schema.feature(f).ordered()) continue;
    double lo = rows[0][f], hi = rows[0][f];
    for (const auto& row : rows) {
      lo = std::min(lo, row[f]);
      hi = std::max(hi, row[f]);
    }
    r[f] = hi - lo;
  }
  return r;
}

}  // namespace tabfa
