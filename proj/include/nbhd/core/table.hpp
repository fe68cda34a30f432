#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nbhd {

// Shortest round-trip decimal representation; deterministic across runs.
std::string format_double(double v);
double parse_double(std::string_view s, std::string_view field = "value");
long long parse_int(std::string_view s, std::string_view field = "value");

// Tab-separated table with a header row. All stage manifests use this format.
class Table {
 public:
  Table() = default;
  explicit Table(std::vector<std::string> header);

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  // Column index, or throws SchemaError naming the missing column.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;

  void add_row(std::vector<std::string> row);
  const std::string& at(std::size_t row, std::string_view col) const;
  double number(std::size_t row, std::string_view col) const;

  void sort_by(std::string_view col);

  void write(const std::filesystem::path& path) const;
  static Table read(const std::filesystem::path& path);

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace nbhd
