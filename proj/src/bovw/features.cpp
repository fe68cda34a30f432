#include "nbhd/bovw/features.hpp"

#include <cmath>

#include "nbhd/core/error.hpp"
#include "nbhd/core/table.hpp"
#include "nbhd/nn/io.hpp"

namespace nbhd::bovw {

void FeatureStore::save(const std::filesystem::path& path) const {
  if (x.rows() != static_cast<int>(item_ids.size()) || geoids.size() != item_ids.size()) {
    throw InternalError("feature store index does not match the matrix");
  }
  nn::BlobFile f;
  f.kind = "features";
  f.meta = "{}";
  f.blobs.push_back({"x", x.shape, x.data});
  nn::save_blob_file(path, f);
  Table t({"row", "item_id", "geoid"});
  for (std::size_t i = 0; i < item_ids.size(); ++i) {
    t.add_row({std::to_string(i), item_ids[i], geoids[i]});
  }
  t.write(path.string() + ".index.tsv");
}

FeatureStore FeatureStore::load(const std::filesystem::path& path) {
  const nn::BlobFile f = nn::load_blob_file(path, "features");
  FeatureStore s;
  const nn::Blob& b = f.get("x");
  s.x.shape = b.shape;
  s.x.data = b.data;
  const Table t = Table::read(path.string() + ".index.tsv");
  for (std::size_t r = 0; r < t.size(); ++r) {
    s.item_ids.push_back(t.at(r, "item_id"));
    s.geoids.push_back(t.at(r, "geoid"));
  }
  if (s.x.shape.size() != 2 || s.x.rows() != static_cast<int>(s.item_ids.size())) {
    throw ParseError(path.string() + ": index and matrix disagree on row count");
  }
  return s;
}

FeatureStore FeatureStore::rows(const std::vector<std::size_t>& idx) const {
  FeatureStore s;
  const int d = x.shape.at(1);
  s.x = nn::Tensor({static_cast<int>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    s.item_ids.push_back(item_ids.at(idx[i]));
    s.geoids.push_back(geoids.at(idx[i]));
    std::copy(x.row(static_cast<int>(idx[i])), x.row(static_cast<int>(idx[i])) + d, s.x.row(static_cast<int>(i)));
  }
  return s;
}

nn::Tensor extract_features(supervised::Backbone& backbone,
                            const std::vector<const geo::Raster*>& patches, int patch_size) {
  for (const auto* p : patches) {
    if (p->width() != patch_size || p->height() != patch_size) {
      throw InputError("feature extraction expects " + std::to_string(patch_size) + "x" +
                       std::to_string(patch_size) + " patches, got " + std::to_string(p->width()) + "x" +
                       std::to_string(p->height()));
    }
  }
  return backbone.features(patches);
}

Standardizer Standardizer::fit(const nn::Tensor& x) {
  if (x.shape.size() != 2 || x.rows() == 0) throw InputError("standardizer needs a nonempty matrix");
  const int n = x.rows();
  const int d = x.shape[1];
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0), sq(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i) {
    const float* r = x.row(i);
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += r[j];
  }
  for (auto& m : mean) m /= n;
  for (int i = 0; i < n; ++i) {
    const float* r = x.row(i);
    for (int j = 0; j < d; ++j) {
      const double c = r[j] - mean[static_cast<std::size_t>(j)];
      sq[static_cast<std::size_t>(j)] += c * c;
    }
  }
  Standardizer s;
  for (int j = 0; j < d; ++j) {
    const double sd = std::sqrt(sq[static_cast<std::size_t>(j)] / n);
    s.mean.push_back(static_cast<float>(mean[static_cast<std::size_t>(j)]));
    s.scale.push_back(sd > 1e-8 ? static_cast<float>(sd) : 1.0f);
  }
  return s;
}

nn::Tensor Standardizer::apply(const nn::Tensor& x) const {
  if (x.shape.size() != 2 || x.shape[1] != static_cast<int>(mean.size())) {
    throw InputError("standardizer dimension mismatch");
  }
  nn::Tensor y = x;
  const int d = x.shape[1];
  for (int i = 0; i < y.rows(); ++i) {
    float* r = y.row(i);
    for (int j = 0; j < d; ++j) r[j] = (r[j] - mean[static_cast<std::size_t>(j)]) / scale[static_cast<std::size_t>(j)];
  }
  return y;
}

}  // namespace nbhd::bovw
