#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nbhd/bovw/cluster.hpp"
#include "nbhd/bovw/features.hpp"
#include "nbhd/bovw/forest.hpp"
#include "nbhd/dataset/dataset.hpp"
#include "nbhd/supervised/regressor.hpp"

namespace nbhd::bovw {

struct SearchData {
  FeatureStore patches;                 // every grid patch
  std::vector<std::string> patch_split;  // row-aligned with patches
  std::map<std::string, dataset::DatasetItem> hoods;  // labels and split by geoid
};

// Row-aligned split column for a feature store, taken from the hoods.
std::vector<std::string> patch_splits(const FeatureStore& store,
                                      const std::map<std::string, dataset::DatasetItem>& hoods);

struct SearchOptions {
  std::vector<int> d_z = {32, 64};
  std::vector<int> k = {50, 100, 200};
  std::vector<int> dec_extra_k = {20};
  std::vector<FeatureMode> modes = {FeatureMode::frequency, FeatureMode::distance};
  std::vector<ClusterMethod> methods = {ClusterMethod::kmeans, ClusterMethod::dec};
  std::vector<supervised::Target> targets = {supervised::Target::density, supervised::Target::mhi,
                                             supervised::Target::education};
  AutoencoderOptions autoencoder;
  DecOptions dec;
  KMeansOptions kmeans;
  ForestGrid forest;
  bool min_aggregation = false;
  std::uint64_t seed = 0;
};

struct LeaderboardRow {
  std::string target;
  std::string method;
  int d_z = 0;
  int k = 0;
  std::string mode;
  std::string forest;  // chosen forest params
  double val_r2 = 0.0;
  double val_mae = 0.0;
  int train_hoods = 0;
  int val_hoods = 0;
  std::string note;  // skipped/collapse notes
};

struct HoodResult {
  std::string geoid;
  std::string split;
  double truth = 0.0;
  double prediction = 0.0;
};

struct Winner {
  supervised::Target target;
  ClusterMethod method;
  LeaderboardRow row;
  std::shared_ptr<ClusterModel> cluster;
  RandomForest forest;
  FeatureMode mode = FeatureMode::frequency;
  HoodFeatures features;             // every hood with patches, all splits
  std::vector<HoodResult> results;   // every labelled hood with patches
};

struct SearchResult {
  std::vector<LeaderboardRow> leaderboard;
  std::vector<Winner> winners;  // one per (target, method)
};

// Exhaustive grid over (d_Z, k, mode) per method with a validation-selected
// forest per point. One autoencoder is trained per d_Z and shared by every k.
// Ties on validation R^2 go to the smaller k.
SearchResult hyperparameter_search(const SearchData& data, const SearchOptions& options);

void write_leaderboard(const std::filesystem::path& path, const std::vector<LeaderboardRow>& rows);
std::vector<LeaderboardRow> read_leaderboard(const std::filesystem::path& path);

}  // namespace nbhd::bovw
