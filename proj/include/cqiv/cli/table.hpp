#pragma once

// CSV input and the long-format result tables written by the command-line
// tool. Numbers are written in round-trip form so that a table read back
// reproduces every double exactly; NaN is written as an empty cell.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cqiv/error.hpp"

namespace cqiv::cli {

/// Invalid run configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal form that reads back to the same double (at most 17
/// significant digits).
inline std::string format_number(double x) {
  if (std::isnan(x)) return "";
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

/// Parses a full cell as a double; returns false on trailing garbage or an empty cell.
inline bool parse_number(const std::string& s, double& out) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  if (b == e) return false;
  const char* first = s.data() + b;
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + e, out);
  return ec == std::errc() && ptr == s.data() + e;
}

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

/// A numeric CSV file: one header row, then complete numeric records.
struct DataFrame {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  [[nodiscard]] std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }

  [[nodiscard]] bool has(const std::string& name) const {
    for (const auto& n : names) {
      if (n == name) return true;
    }
    return false;
  }

  [[nodiscard]] const std::vector<double>& column(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (names[k] == name) return columns[k];
    }
    throw DataError("missing column '" + name + "'");
  }
};

inline DataFrame parse_csv(std::istream& in, const std::string& source = "input") {
  DataFrame df;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    // Lines starting with '#' carry metadata, such as the header of a generated file.
    if (!line.empty() && line[0] == '#') continue;
    if (!have_header) {
      if (line.empty()) continue;
      df.names = split_csv_line(line);
      for (auto& n : df.names) {
        while (!n.empty() && n.front() == ' ') n.erase(n.begin());
        while (!n.empty() && n.back() == ' ') n.pop_back();
        if (n.empty()) throw DataError(source + ": empty column name in header");
      }
      for (std::size_t a = 0; a < df.names.size(); ++a) {
        for (std::size_t b = a + 1; b < df.names.size(); ++b) {
          if (df.names[a] == df.names[b]) throw DataError(source + ": duplicate column '" + df.names[a] + "'");
        }
      }
      df.columns.assign(df.names.size(), {});
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != df.names.size()) {
      throw DataError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " fields, expected " + std::to_string(df.names.size()));
    }
    for (std::size_t k = 0; k < cells.size(); ++k) {
      double v = 0.0;
      if (!parse_number(cells[k], v)) {
        const bool blank = cells[k].find_first_not_of(" \t") == std::string::npos;
        throw DataError(source + ": line " + std::to_string(line_no) + ", column '" + df.names[k] + "': " +
                        (blank ? std::string("missing value") : "'" + cells[k] + "' is not a number"));
      }
      if (!std::isfinite(v)) {
        throw DataError(source + ": line " + std::to_string(line_no) + ", column '" + df.names[k] +
                        "': non-finite value");
      }
      df.columns[k].push_back(v);
    }
  }
  if (!have_header) throw DataError(source + ": file is empty");
  if (df.rows() == 0) throw DataError(source + ": no data rows");
  return df;
}

inline DataFrame read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return parse_csv(in, path);
}

/// Writes "# key=value" header lines, a column row, then the records.
class CsvWriter {
 public:
  CsvWriter(std::string schema, std::vector<std::pair<std::string, std::string>> meta, std::vector<std::string> columns)
      : schema_(std::move(schema)), meta_(std::move(meta)), columns_(std::move(columns)) {}

  void add(std::vector<std::string> cells) {
    if (cells.size() != columns_.size()) throw Error("CsvWriter: record width does not match the header");
    rows_.push_back(std::move(cells));
  }

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << "# schema=" << schema_ << " version=" << kSchemaVersion << '\n';
    for (const auto& [k, v] : meta_) os << "# " << k << '=' << v << '\n';
    write_row(os, columns_);
    for (const auto& r : rows_) write_row(os, r);
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << str();
  }

 private:
  static void write_row(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) os << ',';
      os << quote_csv(cells[k]);
    }
    os << '\n';
  }

  std::string schema_;
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

/// Header metadata and string cells of a file written by CsvWriter.
struct TableFile {
  std::map<std::string, std::string> meta;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

inline TableFile parse_table(std::istream& in, const std::string& source = "table") {
  TableFile t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq != std::string::npos) t.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      continue;
    }
    auto cells = split_csv_line(line);
    if (t.columns.empty()) {
      t.columns = std::move(cells);
    } else {
      if (cells.size() != t.columns.size()) throw DataError(source + ": ragged record");
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.columns.empty()) throw DataError(source + ": no header row");
  return t;
}

// ---------------------------------------------------------------------------
// Result table: one row per (quantile, item).

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ResultRow {
  double quantile = kNaN;
  std::string item;
  double estimate = kNaN;
  double ci_lower = kNaN;
  double ci_upper = kNaN;
  double selected_step = kNaN;
  double k0 = kNaN;
  double varsigma1 = kNaN;
  double pct_J0 = kNaN;
  double pct_pred_above_C = kNaN;
  double pct_J1 = kNaN;
  double pct_J0_in_J1 = kNaN;
  double count_J1_not_in_J0 = kNaN;
};

struct ResultTable {
  std::string command;
  std::uint64_t seed = 0;
  std::vector<ResultRow> rows;
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols = {
      "quantile", "item",   "estimate",         "ci_lower", "ci_upper",     "selected_step",     "k0",
      "varsigma1", "pct_J0", "pct_pred_above_C", "pct_J1",   "pct_J0_in_J1", "count_J1_not_in_J0"};
  return cols;
}

namespace detail {
inline double* numeric_field(ResultRow& r, std::size_t k) {
  double* fields[] = {&r.quantile, nullptr,     &r.estimate,         &r.ci_lower, &r.ci_upper,
                      &r.selected_step, &r.k0,  &r.varsigma1,        &r.pct_J0,   &r.pct_pred_above_C,
                      &r.pct_J1,   &r.pct_J0_in_J1, &r.count_J1_not_in_J0};
  return fields[k];
}
}  // namespace detail

inline std::string result_table_string(const ResultTable& t) {
  CsvWriter w("cqiv-result-table", {{"command", t.command}, {"seed", std::to_string(t.seed)}}, result_columns());
  for (ResultRow r : t.rows) {
    std::vector<std::string> cells;
    for (std::size_t k = 0; k < result_columns().size(); ++k) {
      cells.push_back(k == 1 ? r.item : format_number(*detail::numeric_field(r, k)));
    }
    w.add(std::move(cells));
  }
  return w.str();
}

inline void write_result_table(const ResultTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << result_table_string(t);
}

inline ResultTable parse_result_table(std::istream& in, const std::string& source = "result table") {
  const TableFile f = parse_table(in, source);
  if (f.columns != result_columns()) throw DataError(source + ": not a result table");
  auto sv = f.meta.find("schema");
  if (sv == f.meta.end() || sv->second != "cqiv-result-table") throw DataError(source + ": wrong schema");
  ResultTable t;
  if (auto it = f.meta.find("command"); it != f.meta.end()) t.command = it->second;
  if (auto it = f.meta.find("seed"); it != f.meta.end()) t.seed = std::stoull(it->second);
  for (const auto& cells : f.rows) {
    ResultRow r;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k == 1) {
        r.item = cells[k];
        continue;
      }
      double v = kNaN;
      if (!cells[k].empty() && !parse_number(cells[k], v)) {
        throw DataError(source + ": bad number '" + cells[k] + "' in column " + f.columns[k]);
      }
      *detail::numeric_field(r, k) = v;
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline ResultTable read_result_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_result_table(in, path);
}

/// Field-by-field equality with NaN equal to NaN.
inline bool same_bits(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

inline bool operator==(const ResultRow& a, const ResultRow& b) {
  if (a.item != b.item) return false;
  ResultRow x = a, y = b;
  for (std::size_t k = 0; k < result_columns().size(); ++k) {
    if (k == 1) continue;
    if (!same_bits(*detail::numeric_field(x, k), *detail::numeric_field(y, k))) return false;
  }
  return true;
}

}  // namespace cqiv::cli
