#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "snam/error.hpp"

namespace snam::data {

enum class ColumnKind { numeric, categorical };
enum class TargetKind { continuous, binary };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
};

/// Which columns to read and how. Columns of the file not listed are ignored.
struct TableSchema {
  std::vector<ColumnSpec> features;
  std::string target;  ///< empty: no target is read and every target entry is NaN
  TargetKind target_kind = TargetKind::continuous;
  /// For binary targets stored as labels: this label becomes 1, any other 0.
  std::optional<std::string> positive_label;
};

/// Typed feature columns plus target, with missing-value rows removed.
struct RawTable {
  std::vector<ColumnSpec> columns;
  std::vector<std::vector<double>> numeric;          ///< per column; empty for categorical
  std::vector<std::vector<std::string>> categorical;  ///< per column; empty for numeric
  std::vector<double> target;
  std::string target_name;
  TargetKind target_kind = TargetKind::continuous;
  std::vector<std::size_t> source_rows;  ///< 1-based data row in the file, header excluded
  std::size_t dropped_rows = 0;
  std::vector<std::string> warnings;

  std::size_t rows() const noexcept { return target.size(); }
};

namespace detail {

/// Splits one CSV record. Supports double-quoted fields with "" escapes; a
/// quoted field may not span lines.
inline std::vector<std::string> split_record(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool is_missing(std::string_view s) {
  s = trim(s);
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "?";
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace detail

/// Parses CSV text with a header row. Rows with a missing target or feature
/// cell are dropped and counted; a present but unparseable numeric cell is a
/// SchemaMismatch naming the row (1-based, header excluded) and column.
inline RawTable parse_csv(std::istream& in, const TableSchema& schema, const std::string& source = "<csv>") {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw Error(ErrorCode::empty_file, source + " has no header row");
  }
  const auto header = detail::split_record(line);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index.emplace(std::string(detail::trim(header[i])), i);
  auto locate = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorCode::schema_mismatch, source + ": column '" + name + "' not found in header");
    return it->second;
  };

  RawTable table;
  table.columns = schema.features;
  table.target_kind = schema.target_kind;
  table.target_name = schema.target;
  table.numeric.resize(schema.features.size());
  table.categorical.resize(schema.features.size());
  std::vector<std::size_t> feature_pos;
  for (const auto& c : schema.features) feature_pos.push_back(locate(c.name));
  const bool has_target = !schema.target.empty();
  const std::size_t target_pos = has_target ? locate(schema.target) : 0;

  std::size_t row = 0;
  std::vector<double> nums(schema.features.size());
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto fields = detail::split_record(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::schema_mismatch, source + ": row " + std::to_string(row) + " has " +
                                                  std::to_string(fields.size()) + " fields, header has " +
                                                  std::to_string(header.size()));
    }
    bool missing = has_target && detail::is_missing(fields[target_pos]);
    for (std::size_t c = 0; c < feature_pos.size() && !missing; ++c) missing = detail::is_missing(fields[feature_pos[c]]);
    if (missing) {
      ++table.dropped_rows;
      continue;
    }

    double y = std::numeric_limits<double>::quiet_NaN();
    const std::string_view target_cell = has_target ? detail::trim(fields[target_pos]) : std::string_view{};
    if (!has_target) {
    } else if (schema.positive_label) {
      y = target_cell == *schema.positive_label ? 1.0 : 0.0;
    } else if (auto v = detail::parse_double(target_cell)) {
      y = *v;
    } else {
      throw Error(ErrorCode::schema_mismatch, source + ": row " + std::to_string(row) + ", column '" + schema.target +
                                                  "': cannot parse '" + std::string(target_cell) + "' as a number");
    }
    if (has_target && schema.target_kind == TargetKind::binary && y != 0.0 && y != 1.0) {
      throw Error(ErrorCode::schema_mismatch, source + ": row " + std::to_string(row) + ", binary target '" +
                                                  schema.target + "' has value " + std::string(target_cell));
    }

    for (std::size_t c = 0; c < feature_pos.size(); ++c) {
      if (schema.features[c].kind != ColumnKind::numeric) continue;
      const auto v = detail::parse_double(fields[feature_pos[c]]);
      if (!v) {
        throw Error(ErrorCode::schema_mismatch, source + ": row " + std::to_string(row) + ", column '" +
                                                    schema.features[c].name + "': cannot parse '" +
                                                    fields[feature_pos[c]] + "' as a number");
      }
      nums[c] = *v;
    }
    for (std::size_t c = 0; c < feature_pos.size(); ++c) {
      if (schema.features[c].kind == ColumnKind::numeric) {
        table.numeric[c].push_back(nums[c]);
      } else {
        table.categorical[c].emplace_back(detail::trim(fields[feature_pos[c]]));
      }
    }
    table.target.push_back(y);
    table.source_rows.push_back(row);
  }
  if (table.dropped_rows > 0) {
    table.warnings.push_back(source + ": dropped " + std::to_string(table.dropped_rows) + " row(s) with missing values");
  }
  return table;
}

inline RawTable load_csv(const std::string& path, const TableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  return parse_csv(in, schema, path);
}

}  // namespace snam::data
