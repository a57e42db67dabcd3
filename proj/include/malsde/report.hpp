#pragma once

// CSV output with a fixed column order. Floats are written with 17
// significant digits so they round-trip bit-exactly.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <charconv>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace malsde {

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip
  return std::string(buf, res.ptr);
}

inline std::string format_number(std::size_t v) { return std::to_string(v); }
inline std::string format_number(int v) { return std::to_string(v); }
inline std::string format_number(unsigned long long v) { return std::to_string(v); }

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  /// Appends a row; cells are preformatted strings.
  void add(std::vector<std::string> cells) {
    if (cells.size() != columns_.size())
      throw std::logic_error("csv row has " + std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(columns_.size()));
    rows_.push_back(std::move(cells));
  }

  std::string str() const {
    std::string out;
    append_line(out, columns_);
    for (const auto& r : rows_) append_line(out, r);
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << str();
    if (!f) throw std::runtime_error("write failed for " + path);
  }

  std::size_t size() const { return rows_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  static void append_line(std::string& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
      if (quote) {
        out += '"';
        for (char c : cells[i]) {
          if (c == '"') out += '"';
          out += c;
        }
        out += '"';
      } else {
        out += cells[i];
      }
    }
    out += '\n';
  }

  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

inline const std::vector<std::string>& density_columns() {
  static const std::vector<std::string> c{"model", "n",   "N",      "M",      "seed",     "y",   "alpha",
                                          "estimate", "se", "kde", "oracle", "envelope", "pass"};
  return c;
}

inline const std::vector<std::string>& bounds_columns() {
  static const std::vector<std::string> c{"check", "model", "n",  "N",   "M",      "seed",
                                          "param", "lhs",   "se", "rhs", "margin", "pass"};
  return c;
}

inline const std::vector<std::string>& oracle_columns() {
  static const std::vector<std::string> c{"model", "alpha", "N", "lhs", "rhs", "gap"};
  return c;
}

/// path_id, k, t, x1..xd, dw1..dwd
inline std::vector<std::string> chain_columns(int dim) {
  std::vector<std::string> c{"path_id", "k", "t"};
  for (int i = 1; i <= dim; ++i) c.push_back("x" + std::to_string(i));
  for (int i = 1; i <= dim; ++i) c.push_back("dw" + std::to_string(i));
  return c;
}

}  // namespace malsde
