#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nbhd::dataset {

enum class GroupBy { item, neighborhood };
GroupBy parse_group_by(const std::string& s);
std::string to_string(GroupBy g);

struct DatasetItem {
  std::string item_id;
  std::string geoid;
  std::string path;
  double density = 0.0;
  double mhi = 0.0;
  double education = 0.0;
  std::string split;  // train | val | test, empty before splitting
  // Mode-specific columns (grid coords, fractions, original dims).
  std::map<std::string, std::string> extra;
};

struct DatasetManifest {
  std::string mode;  // patching | resizing | grid
  std::uint64_t seed = 0;
  std::vector<DatasetItem> items;  // sorted by item_id

  std::vector<const DatasetItem*> subset(const std::string& split) const;

  // Tab-separated items plus a small JSON sidecar (<path>.json) with mode and
  // seed.
  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// floor(f_train*N), floor(f_val*N), remainder.
SplitSizes split_sizes(std::size_t n, const std::array<double, 3>& fractions);

// Shuffles units (items, or neighborhoods when grouped) with the seed and
// assigns the first/second/third blocks to train/val/test. Grouped splits
// apply the size rule to neighborhoods, so no geoid spans two splits.
DatasetManifest split(std::vector<DatasetItem> items, const std::array<double, 3>& fractions,
                      std::uint64_t seed, GroupBy group_by, const std::string& mode);

}  // namespace nbhd::dataset
