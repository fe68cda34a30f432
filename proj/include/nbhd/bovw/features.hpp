#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nbhd/geo/raster.hpp"
#include "nbhd/nn/tensor.hpp"
#include "nbhd/supervised/backbone.hpp"

namespace nbhd::bovw {

// Patch features with their (item_id, geoid) index, row-aligned.
struct FeatureStore {
  std::vector<std::string> item_ids;
  std::vector<std::string> geoids;
  nn::Tensor x;  // N x D

  std::size_t size() const { return item_ids.size(); }
  // Binary matrix at `path` plus an index table at <path>.index.tsv.
  void save(const std::filesystem::path& path) const;
  static FeatureStore load(const std::filesystem::path& path);
  FeatureStore rows(const std::vector<std::size_t>& idx) const;
};

// 2048-dim frozen-backbone feature per 112x112 patch (InputError otherwise).
nn::Tensor extract_features(supervised::Backbone& backbone,
                            const std::vector<const geo::Raster*>& patches, int patch_size = 112);

// Per-column z-scoring; columns with zero spread are centred only.
struct Standardizer {
  nn::FloatVec mean;
  nn::FloatVec scale;

  static Standardizer fit(const nn::Tensor& x);
  nn::Tensor apply(const nn::Tensor& x) const;
};

}  // namespace nbhd::bovw
