#include "nbhd/pipeline/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fmt/format.h>

#include <set>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"

namespace nbhd::pipeline {

namespace {

template <typename T>
std::string type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else return "a list";
}

// Reads fields out of a YAML mapping and remembers which keys were consumed.
class Reader {
 public:
  Reader(YAML::Node node, std::string source) : source_(std::move(source)) { stack_.push_back({node, "", {}}); }

  template <typename T>
  void field(const char* key, T& out) {
    Frame& f = stack_.back();
    f.seen.insert(key);
    const YAML::Node n = f.node[key];
    if (!n.IsDefined() || n.IsNull()) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(fmt::format("{}:{}: '{}{}' expects {}", source_, n.Mark().line + 1, f.prefix, key,
                                    type_name<T>()));
    }
  }

  template <typename F>
  void section(const char* key, F&& body) {
    Frame& f = stack_.back();
    f.seen.insert(key);
    YAML::Node n = f.node[key];
    if (!n.IsDefined() || n.IsNull()) return;
    if (!n.IsMap()) {
      throw ConfigError(fmt::format("{}:{}: '{}{}' must be a mapping", source_, n.Mark().line + 1, f.prefix, key));
    }
    stack_.push_back({n, f.prefix + key + ".", {}});
    body();
    finish();
    stack_.pop_back();
  }

  void finish() {
    const Frame& f = stack_.back();
    for (auto it = f.node.begin(); it != f.node.end(); ++it) {
      const std::string k = it->first.as<std::string>();
      if (!f.seen.count(k)) {
        throw ConfigError(fmt::format("{}:{}: unknown key '{}{}'", source_, it->first.Mark().line + 1, f.prefix, k));
      }
    }
  }

 private:
  struct Frame {
    YAML::Node node;
    std::string prefix;
    std::set<std::string> seen;
  };
  std::string source_;
  std::vector<Frame> stack_;
};

class Writer {
 public:
  Writer() { out_ << YAML::BeginMap; }

  template <typename T>
  void field(const char* key, T& v) {
    out_ << YAML::Key << key << YAML::Value;
    if constexpr (std::is_floating_point_v<T>) {
      out_ << format_double(v);
    } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<std::string>>) {
      out_ << YAML::Flow << v;
    } else if constexpr (std::is_same_v<T, std::array<double, 3>>) {
      out_ << YAML::Flow << YAML::BeginSeq;
      for (double d : v) out_ << format_double(d);
      out_ << YAML::EndSeq;
    } else if constexpr (std::is_same_v<T, std::string>) {
      out_ << YAML::DoubleQuoted << v;
    } else {
      out_ << v;
    }
  }

  template <typename F>
  void section(const char* key, F&& body) {
    out_ << YAML::Key << key << YAML::Value << YAML::BeginMap;
    body();
    out_ << YAML::EndMap;
  }

  std::string str() {
    out_ << YAML::EndMap;
    return std::string(out_.c_str()) + "\n";
  }

 private:
  YAML::Emitter out_;
};

template <typename V>
void visit(V& v, PipelineConfig& c) {
  v.field("seed", c.seed);
  v.section("paths", [&] {
    v.field("data_root", c.paths.data_root);
    v.field("tiles", c.paths.tiles);
    v.field("boundaries", c.paths.boundaries);
    v.field("output_root", c.paths.output_root);
    v.field("backbone", c.paths.backbone);
  });
  v.section("survey", [&] {
    auto& s = c.survey;
    v.field("endpoint", s.endpoint);
    v.field("dataset", s.dataset);
    v.field("fixture", s.fixture);
    v.field("state", s.state);
    v.field("county", s.county);
    v.field("year", s.year);
    v.field("api_key_env", s.api_key_env);
    v.field("max_attempts", s.max_attempts);
    v.field("timeout_s", s.timeout_s);
  });
  v.section("ingest", [&] { v.field("keep_ir", c.ingest.keep_ir); });
  v.section("preprocess", [&] {
    auto& p = c.preprocess;
    v.field("modes", p.modes);
    v.field("patch_size", p.patch_size);
    v.field("keep_threshold", p.keep_threshold);
    v.field("resize_width", p.resize_width);
    v.field("resize_height", p.resize_height);
    v.field("grid_cell", p.grid_cell);
    v.field("max_per_hood", p.max_per_hood);
  });
  v.section("split", [&] {
    v.field("fractions", c.split.fractions);
    v.field("group_by", c.split.group_by);
  });
  v.section("synth", [&] {
    auto& s = c.synth;
    v.field("n_hoods", s.n_hoods);
    v.field("tile_size", s.tile_size);
    v.field("min_side_px", s.min_side_px);
    v.field("max_side_px", s.max_side_px);
    v.field("density_min", s.density_min);
    v.field("density_max", s.density_max);
    v.field("roof_fraction_per_density", s.roof_fraction_per_density);
    v.field("zero_population_share", s.zero_population_share);
    v.field("missing_income_share", s.missing_income_share);
    v.field("building_side_m", s.building_side_m);
    v.field("building_side_per_affluence", s.building_side_per_affluence);
    v.field("noise", s.noise);
  });
  v.section("supervised", [&] {
    auto& s = c.supervised;
    v.field("modes", s.modes);
    v.field("targets", s.targets);
    v.field("batch_size", s.batch_size);
    v.field("lr", s.lr);
    v.field("weight_decay", s.weight_decay);
    v.field("patience", s.patience);
    v.field("max_epochs", s.max_epochs);
    v.field("head_widths", s.head_widths);
    v.field("dropout", s.dropout);
    v.field("dropout_layers", s.dropout_layers);
    v.field("standardize_labels", s.standardize_labels);
    v.field("in_channels", s.in_channels);
  });
  v.section("semisup", [&] {
    auto& s = c.semisup;
    v.field("methods", s.methods);
    v.field("targets", s.targets);
    v.field("d_z", s.d_z);
    v.field("k", s.k);
    v.field("dec_extra_k", s.dec_extra_k);
    v.field("modes", s.modes);
    v.field("min_aggregation", s.min_aggregation);
    v.field("kmeans_max_iter", s.kmeans_max_iter);
    v.field("kmeans_n_init", s.kmeans_n_init);
    v.section("autoencoder", [&] {
      auto& a = s.autoencoder;
      v.field("hidden", a.hidden);
      v.field("lr", a.lr);
      v.field("weight_decay", a.weight_decay);
      v.field("batch_size", a.batch_size);
      v.field("max_epochs", a.max_epochs);
      v.field("patience", a.patience);
    });
    v.section("dec", [&] {
      auto& d = s.dec;
      v.field("lambda", d.lambda);
      v.field("lr", d.lr);
      v.field("batch_size", d.batch_size);
      v.field("max_epochs", d.max_epochs);
      v.field("patience", d.patience);
      v.field("plateau_tol", d.plateau_tol);
      v.field("collapse_epochs", d.collapse_epochs);
      v.field("train_decoder", d.train_decoder);
    });
    v.section("forest", [&] {
      v.field("n_trees", s.forest.n_trees);
      v.field("max_depth", s.forest.max_depth);
      v.field("min_leaf", s.forest.min_leaf);
    });
  });
  v.section("evaluate", [&] {
    v.field("null_permutations", c.evaluate.null_permutations);
    v.field("resize_bins", c.evaluate.resize_bins);
  });
  v.section("explain", [&] {
    auto& e = c.explain;
    v.field("saliency_grid", e.saliency_grid);
    v.field("saliency_permutations", e.saliency_permutations);
    v.field("saliency_patches", e.saliency_patches);
    v.field("shap_background", e.shap_background);
    v.field("shap_hoods", e.shap_hoods);
    v.field("sheet_clusters", e.sheet_clusters);
    v.field("sheet_size", e.sheet_size);
  });
  v.section("map", [&] { v.field("bins", c.map.bins); });
}

YAML::Node parse_yaml(const std::string& text, const std::string& source) {
  try {
    YAML::Node n = YAML::Load(text);
    if (n.IsNull()) return YAML::Node(YAML::NodeType::Map);
    if (!n.IsMap()) throw ConfigError(source + ":1: top level must be a mapping");
    return n;
  } catch (const YAML::ParserException& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, e.mark.line + 1, e.msg));
  }
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal().string();
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

void check_in(const std::vector<std::string>& values, const std::set<std::string>& allowed, const std::string& key) {
  for (const auto& v : values) {
    if (!allowed.count(v)) throw ConfigError("invalid config: " + key + " has unknown entry '" + v + "'");
  }
}

}  // namespace

PipelineConfig PipelineConfig::parse(const std::string& text, const std::string& source,
                                     const std::filesystem::path& base_dir) {
  PipelineConfig c;
  Reader r(parse_yaml(text, source), source);
  visit(r, c);
  r.finish();
  const std::filesystem::path base = std::filesystem::absolute(base_dir);
  c.paths.data_root = resolve(base, c.paths.data_root);
  c.paths.tiles = c.paths.tiles.empty() ? (std::filesystem::path(c.paths.data_root) / "tiles").string()
                                        : resolve(base, c.paths.tiles);
  c.paths.boundaries = c.paths.boundaries.empty()
                           ? (std::filesystem::path(c.paths.data_root) / "boundaries.geojson").string()
                           : resolve(base, c.paths.boundaries);
  c.paths.output_root = resolve(base, c.paths.output_root);
  c.paths.backbone = resolve(base, c.paths.backbone);
  c.survey.fixture = resolve(base, c.survey.fixture);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(read_file(path), path.string(), path.parent_path().empty() ? "." : path.parent_path());
}

void PipelineConfig::validate() const {
  check_in(preprocess.modes, {"patching", "resizing", "grid"}, "preprocess.modes");
  check(preprocess.patch_size > 0 && preprocess.grid_cell > 0, "patch sizes must be positive");
  check(preprocess.keep_threshold >= 0 && preprocess.keep_threshold < 1, "preprocess.keep_threshold must be in [0, 1)");
  check(preprocess.resize_width > 0 && preprocess.resize_height > 0, "resize dimensions must be positive");
  check(preprocess.max_per_hood > 0, "preprocess.max_per_hood must be positive");
  double fsum = 0.0;
  for (double f : split.fractions) {
    check(f >= 0, "split.fractions must be nonnegative");
    fsum += f;
  }
  check(std::fabs(fsum - 1.0) <= 1e-9, "split.fractions must sum to 1");
  check(split.group_by == "neighborhood" || split.group_by == "item", "split.group_by must be neighborhood or item");
  check(synth.n_hoods > 0 && synth.min_side_px > 0 && synth.min_side_px <= synth.max_side_px, "synth sizes");
  check(synth.density_min > 0 && synth.density_min <= synth.density_max, "synth density range");
  check_in(supervised.modes, {"patching", "resizing"}, "supervised.modes");
  const std::set<std::string> targets = {"density", "mhi", "education"};
  check_in(supervised.targets, targets, "supervised.targets");
  check_in(semisup.targets, targets, "semisup.targets");
  check_in(semisup.methods, {"kmeans", "dec"}, "semisup.methods");
  check_in(semisup.modes, {"frequency", "distance"}, "semisup.modes");
  check(supervised.batch_size > 0 && supervised.lr > 0 && supervised.max_epochs > 0 && supervised.patience > 0,
        "supervised training parameters must be positive");
  check(supervised.dropout >= 0 && supervised.dropout < 1, "supervised.dropout must be in [0, 1)");
  check(supervised.in_channels == 3 || supervised.in_channels == 4, "supervised.in_channels must be 3 or 4");
  for (int d : semisup.d_z) check(d > 0, "semisup.d_z entries must be positive");
  for (int k : semisup.k) check(k > 0, "semisup.k entries must be positive");
  for (int k : semisup.dec_extra_k) check(k > 0, "semisup.dec_extra_k entries must be positive");
  check(!semisup.d_z.empty() && !semisup.k.empty(), "semisup grid must not be empty");
  check(semisup.autoencoder.hidden.size() == 3, "semisup.autoencoder.hidden needs three widths");
  check(semisup.dec.collapse_epochs > 0, "semisup.dec.collapse_epochs must be positive");
  for (int t : semisup.forest.n_trees) check(t > 0, "semisup.forest.n_trees entries must be positive");
  for (int l : semisup.forest.min_leaf) check(l > 0, "semisup.forest.min_leaf entries must be positive");
  check(explain.saliency_grid >= 1 && explain.saliency_grid <= 8, "explain.saliency_grid must be in [1, 8]");
  check(explain.saliency_permutations > 0, "explain.saliency_permutations must be positive");
  check(explain.shap_background > 0, "explain.shap_background must be positive");
  check(evaluate.null_permutations >= 0, "evaluate.null_permutations must be >= 0");
  check(evaluate.resize_bins > 0, "evaluate.resize_bins must be positive");
  check(map.bins > 0, "map.bins must be positive");
}

std::string PipelineConfig::to_yaml() const {
  PipelineConfig copy = *this;
  Writer w;
  visit(w, copy);
  return w.str();
}

std::string PipelineConfig::hash() const { return fmt::format("{:016x}", fnv1a64(to_yaml())); }

void apply_grid_file(SemisupConfig& cfg, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("grid file not found: " + path.string());
  Reader r(parse_yaml(read_file(path), path.string()), path.string());
  r.field("d_z", cfg.d_z);
  r.field("k", cfg.k);
  r.field("dec_extra_k", cfg.dec_extra_k);
  r.field("modes", cfg.modes);
  r.section("forest", [&] {
    r.field("n_trees", cfg.forest.n_trees);
    r.field("max_depth", cfg.forest.max_depth);
    r.field("min_leaf", cfg.forest.min_leaf);
  });
  r.finish();
}

}  // namespace nbhd::pipeline
