#pragma once

/**
 * \file csv.hpp
 * Numeric CSV: comma separator, '.' decimal, no quoting, optional single
 * header line. Values are written with 17 significant digits so doubles
 * round-trip.
 */

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mest/design.hpp"
#include "mest/error.hpp"

namespace mest::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t columns() const { return rows.empty() ? header.size() : rows.front().size(); }
};

inline double parse_number(std::string_view field, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
    throw UsageError("csv line " + std::to_string(line) + ": '" + std::string(field) + "' is not a number");
  if (!std::isfinite(v)) throw UsageError("csv line " + std::to_string(line) + ": non-finite value");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline Table parse(const std::string& text, bool has_header) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line);
    if (first && has_header) {
      for (auto f : fields) t.header.emplace_back(f);
      first = false;
      continue;
    }
    first = false;
    std::vector<double> row;
    for (auto f : fields) row.push_back(parse_number(f, lineno));
    const std::size_t want = t.rows.empty() ? (t.header.empty() ? row.size() : t.header.size()) : t.rows.front().size();
    if (row.size() != want)
      throw UsageError("csv line " + std::to_string(lineno) + ": expected " + std::to_string(want) + " fields, got " +
                       std::to_string(row.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << content;
  if (!out) throw UsageError("write to '" + path + "' failed");
}

inline Table read(const std::string& path, bool has_header) { return parse(read_file(path), has_header); }

inline std::string format(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string to_text(const Table& t) {
  std::string out;
  for (std::size_t j = 0; j < t.header.size(); ++j) out += (j ? "," : "") + t.header[j];
  if (!t.header.empty()) out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) out += (j ? "," : "") + format(row[j]);
    out += '\n';
  }
  return out;
}

inline Matrix to_matrix(const Table& t) {
  if (t.rows.empty()) throw UsageError("csv has no data rows");
  Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.columns()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][j];
  return m;
}

/// Single-column table or a single row, flattened.
inline std::vector<double> to_vector(const Table& t) {
  std::vector<double> v;
  if (t.rows.size() == 1) return t.rows.front();
  if (t.columns() != 1) throw UsageError("expected a single column of values");
  for (const auto& r : t.rows) v.push_back(r.front());
  return v;
}

inline std::string column(std::span<const double> values, const std::string& header = "") {
  std::string out = header.empty() ? "" : header + "\n";
  for (double v : values) out += format(v) + '\n';
  return out;
}

}  // namespace mest::csv
