#include "nbhd/dataset/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"

namespace nbhd::dataset {

GroupBy parse_group_by(const std::string& s) {
  if (s == "item") return GroupBy::item;
  if (s == "neighborhood") return GroupBy::neighborhood;
  throw ConfigError("group_by must be 'item' or 'neighborhood', got '" + s + "'");
}

std::string to_string(GroupBy g) { return g == GroupBy::item ? "item" : "neighborhood"; }

std::vector<const DatasetItem*> DatasetManifest::subset(const std::string& split) const {
  std::vector<const DatasetItem*> out;
  for (const auto& it : items) {
    if (it.split == split) out.push_back(&it);
  }
  return out;
}

namespace {
const std::vector<std::string> kBaseColumns = {"item_id", "geoid",   "path",     "split",
                                               "density", "mhi",     "education"};
}

void DatasetManifest::write(const std::filesystem::path& path) const {
  std::set<std::string> extra_cols;
  for (const auto& it : items) {
    for (const auto& [k, v] : it.extra) extra_cols.insert(k);
  }
  std::vector<std::string> header = kBaseColumns;
  header.insert(header.end(), extra_cols.begin(), extra_cols.end());
  Table t(header);
  for (const auto& it : items) {
    std::vector<std::string> row = {it.item_id,
                                    it.geoid,
                                    it.path,
                                    it.split,
                                    format_double(it.density),
                                    format_double(it.mhi),
                                    format_double(it.education)};
    for (const auto& c : extra_cols) {
      auto f = it.extra.find(c);
      row.push_back(f == it.extra.end() ? "" : f->second);
    }
    t.add_row(std::move(row));
  }
  t.write(path);
  nlohmann::json meta = {{"mode", mode}, {"seed", seed}, {"items", items.size()}};
  write_file_atomic(path.string() + ".json", meta.dump(2) + "\n");
}

DatasetManifest DatasetManifest::read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("manifest not found: " + path.string());
  }
  DatasetManifest m;
  const std::filesystem::path meta_path = path.string() + ".json";
  if (std::filesystem::exists(meta_path)) {
    try {
      auto meta = nlohmann::json::parse(read_file(meta_path));
      m.mode = meta.value("mode", "");
      m.seed = meta.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(meta_path.string() + ": " + e.what());
    }
  }
  const Table t = Table::read(path);
  for (const auto& c : kBaseColumns) t.column(c);
  std::vector<std::size_t> extra_idx;
  for (std::size_t c = 0; c < t.header().size(); ++c) {
    if (std::find(kBaseColumns.begin(), kBaseColumns.end(), t.header()[c]) == kBaseColumns.end()) {
      extra_idx.push_back(c);
    }
  }
  for (std::size_t r = 0; r < t.size(); ++r) {
    DatasetItem it;
    it.item_id = t.at(r, "item_id");
    it.geoid = t.at(r, "geoid");
    it.path = t.at(r, "path");
    it.split = t.at(r, "split");
    it.density = t.number(r, "density");
    it.mhi = t.number(r, "mhi");
    it.education = t.number(r, "education");
    for (auto c : extra_idx) {
      const auto& v = t.rows()[r][c];
      if (!v.empty()) it.extra[t.header()[c]] = v;
    }
    m.items.push_back(std::move(it));
  }
  return m;
}

SplitSizes split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || f > 1.0) throw ConfigError("split fractions must lie in [0, 1]");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1 (got " + format_double(sum) + ")");
  }
  // The epsilon keeps products such as 0.7*10 = 6.9999999999999996 on the
  // intended side of the floor.
  auto part = [&](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  SplitSizes s;
  s.train = std::min(n, part(fractions[0]));
  s.val = std::min(n - s.train, part(fractions[1]));
  s.test = n - s.train - s.val;
  return s;
}

DatasetManifest split(std::vector<DatasetItem> items, const std::array<double, 3>& fractions,
                      std::uint64_t seed, GroupBy group_by, const std::string& mode) {
  if (items.empty()) throw InputError("cannot split an empty item list");
  std::sort(items.begin(), items.end(),
            [](const DatasetItem& a, const DatasetItem& b) { return a.item_id < b.item_id; });
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i].item_id == items[i - 1].item_id) {
      throw InputError("duplicate item_id '" + items[i].item_id + "'");
    }
  }

  std::vector<std::string> units;
  if (group_by == GroupBy::item) {
    for (const auto& it : items) units.push_back(it.item_id);
  } else {
    std::set<std::string> g;
    for (const auto& it : items) g.insert(it.geoid);
    units.assign(g.begin(), g.end());
  }
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(units);
  const SplitSizes sizes = split_sizes(units.size(), fractions);
  std::map<std::string, std::string> assign;
  for (std::size_t i = 0; i < units.size(); ++i) {
    assign[units[i]] = i < sizes.train ? "train" : i < sizes.train + sizes.val ? "val" : "test";
  }
  for (auto& it : items) {
    it.split = assign.at(group_by == GroupBy::item ? it.item_id : it.geoid);
  }
  DatasetManifest m;
  m.mode = mode;
  m.seed = seed;
  m.items = std::move(items);
  return m;
}

}  // namespace nbhd::dataset
