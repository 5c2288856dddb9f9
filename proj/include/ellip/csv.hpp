#pragma once

// Minimal CSV output: mandatory header, ',' separator, '.' decimal, LF endings.
// Doubles are printed with 17 significant digits so files round-trip exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "ellip/errors.hpp"

namespace ellip::csv {

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt(std::size_t x) { return std::to_string(x); }
inline std::string fmt(int x) { return std::to_string(x); }
inline std::string fmt(const std::string& s) { return s; }
inline std::string fmt(const char* s) { return s; }

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

  template <typename... Ts>
  void add(const Ts&... cells) {
    static_assert(sizeof...(Ts) > 0);
    std::vector<std::string> row{fmt(cells)...};
    add_row(std::move(row));
  }

  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw ShapeError("csv::Table: row width != header width");
    rows_.push_back(std::move(row));
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string str() const {
    std::ostringstream os;
    write_line(os, header_);
    for (const auto& r : rows_) write_line(os, r);
    return os.str();
  }

 private:
  static void write_line(std::ostringstream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw FileError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ellip::csv
