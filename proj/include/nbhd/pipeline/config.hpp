#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nbhd::pipeline {

struct PathsConfig {
  std::string data_root = "data";
  std::string tiles;        // default <data_root>/tiles
  std::string boundaries;   // default <data_root>/boundaries.geojson
  std::string output_root = "runs";
  std::string backbone = "models/backbone.bin";
};

struct SurveyConfig {
  std::string endpoint = "https://api.census.gov/data";
  std::string dataset = "acs/acs5";
  std::string fixture;  // JSON response file; skips the network when set
  std::string state = "06";
  std::string county = "085";
  int year = 2021;
  std::string api_key_env = "CENSUS_API_KEY";
  int max_attempts = 3;
  int timeout_s = 30;
};

struct IngestConfig {
  bool keep_ir = false;
};

struct PreprocessConfig {
  std::vector<std::string> modes = {"patching", "resizing", "grid"};
  int patch_size = 512;
  double keep_threshold = 0.5;
  int resize_width = 1353;
  int resize_height = 1350;
  int grid_cell = 112;
  int max_per_hood = 50;
};

struct SplitConfig {
  std::array<double, 3> fractions = {0.70, 0.15, 0.15};
  std::string group_by = "neighborhood";
};

struct SynthConfig {
  int n_hoods = 500;
  int tile_size = 2240;
  int min_side_px = 192;
  int max_side_px = 480;
  double density_min = 150.0;
  double density_max = 12000.0;
  double roof_fraction_per_density = 1.0 / 45000.0;
  double zero_population_share = 0.02;
  double missing_income_share = 0.01;
  double building_side_m = 10.0;
  double building_side_per_affluence = 3.0;
  double noise = 0.25;
};

struct SupervisedConfig {
  std::vector<std::string> modes = {"resizing", "patching"};
  std::vector<std::string> targets = {"density", "mhi", "education"};
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int patience = 5;
  int max_epochs = 100;
  std::vector<int> head_widths = {1024, 512, 256, 128, 64, 32};
  double dropout = 0.30;
  int dropout_layers = 4;
  bool standardize_labels = false;
  int in_channels = 3;
};

struct AutoencoderConfig {
  std::vector<int> hidden = {1024, 512, 128};
  double lr = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 64;
  int max_epochs = 30;
  int patience = 3;
};

struct DecConfig {
  double lambda = 0.1;
  double lr = 1e-3;
  int batch_size = 64;
  int max_epochs = 20;
  int patience = 3;
  double plateau_tol = 1e-4;
  int collapse_epochs = 3;
  bool train_decoder = true;
};

struct ForestConfig {
  std::vector<int> n_trees = {100};
  std::vector<int> max_depth = {4, 8, -1};
  std::vector<int> min_leaf = {1, 3, 5};
};

struct SemisupConfig {
  std::vector<std::string> methods = {"kmeans", "dec"};
  std::vector<std::string> targets = {"density", "mhi", "education"};
  std::vector<int> d_z = {32, 64};
  std::vector<int> k = {50, 100, 200};
  std::vector<int> dec_extra_k = {20};
  std::vector<std::string> modes = {"frequency", "distance"};
  bool min_aggregation = false;
  int kmeans_max_iter = 100;
  int kmeans_n_init = 1;
  AutoencoderConfig autoencoder;
  DecConfig dec;
  ForestConfig forest;
};

struct EvaluateConfig {
  // Label-permutation refits per model for the null R^2 (0 disables).
  int null_permutations = 1;
  int resize_bins = 6;
};

struct ExplainConfig {
  int saliency_grid = 4;
  int saliency_permutations = 16;
  int saliency_patches = 10;
  int shap_background = 50;
  int shap_hoods = 100;
  int sheet_clusters = 2;
  int sheet_size = 16;
};

struct MapConfig {
  int bins = 5;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  PathsConfig paths;
  SurveyConfig survey;
  IngestConfig ingest;
  PreprocessConfig preprocess;
  SplitConfig split;
  SynthConfig synth;
  SupervisedConfig supervised;
  SemisupConfig semisup;
  EvaluateConfig evaluate;
  ExplainConfig explain;
  MapConfig map;

  // Parses YAML; unknown keys and type errors raise ConfigError with
  // file:line. Relative paths resolve against the file's directory.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig parse(const std::string& text, const std::string& source,
                              const std::filesystem::path& base_dir);
  // Range and enum checks (ConfigError).
  void validate() const;
  // Fully resolved YAML; loading it back yields the same config.
  std::string to_yaml() const;
  // 16 hex digits over to_yaml().
  std::string hash() const;
};

// Only the grid sections of a semi-supervised config (d_z, k, dec_extra_k,
// modes, forest); used by `train-semisup --grid`.
void apply_grid_file(SemisupConfig& cfg, const std::filesystem::path& path);

}  // namespace nbhd::pipeline
