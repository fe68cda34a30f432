#include "nbhd/core/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nbhd/core/error.hpp"

namespace nbhd {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, std::string_view field) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("cannot parse '" + std::string(s) + "' as a number in field '" +
                     std::string(field) + "'");
  }
  return v;
}

long long parse_int(std::string_view s, std::string_view field) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("cannot parse '" + std::string(s) + "' as an integer in field '" +
                     std::string(field) + "'");
  }
  return v;
}

Table::Table(std::vector<std::string> header) : header_(std::move(header)) {}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw SchemaError("table has no column '" + std::string(name) + "'");
}

bool Table::has_column(std::string_view name) const {
  return std::find(header_.begin(), header_.end(), name) != header_.end();
}

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw InputError("row has " + std::to_string(row.size()) + " fields, header has " +
                     std::to_string(header_.size()));
  }
  for (const auto& f : row) {
    if (f.find_first_of("\t\n") != std::string::npos) {
      throw InputError("field contains a tab or newline: '" + f + "'");
    }
  }
  rows_.push_back(std::move(row));
}

const std::string& Table::at(std::size_t row, std::string_view col) const {
  return rows_.at(row)[column(col)];
}

double Table::number(std::size_t row, std::string_view col) const {
  return parse_double(at(row, col), col);
}

void Table::sort_by(std::string_view col) {
  const std::size_t c = column(col);
  std::stable_sort(rows_.begin(), rows_.end(),
                   [c](const auto& a, const auto& b) { return a[c] < b[c]; });
}

void Table::write(const std::filesystem::path& path) const {
  std::string out;
  auto append_line = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back('\t');
      out += fields[i];
    }
    out.push_back('\n');
  };
  append_line(header_);
  for (const auto& r : rows_) append_line(r);
  write_file_atomic(path, out);
}

Table Table::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open table " + path.string());
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      auto pos = l.find('\t', start);
      if (pos == std::string::npos) {
        out.push_back(l.substr(start));
        break;
      }
      out.push_back(l.substr(start, pos - start));
      start = pos + 1;
    }
    return out;
  };
  if (!std::getline(in, line)) throw EmptyInputError("table " + path.string() + " is empty");
  Table t(split(line));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != t.header_.size()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header_.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    t.rows_.push_back(std::move(fields));
  }
  return t;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace nbhd
