#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nbhd/nn/tensor.hpp"

namespace nbhd::nn {

struct Blob {
  std::string name;
  std::vector<int> shape;
  FloatVec data;
};

struct BlobFile {
  std::string kind;  // e.g. "checkpoint", "features", "backbone"
  std::string meta;  // JSON text
  std::vector<Blob> blobs;

  const Blob& get(const std::string& name) const;  // MissingArtifactError if absent
  bool has(const std::string& name) const;
};

// Binary container: magic, kind, JSON metadata, named float32 arrays and a
// trailing checksum. Written atomically.
void save_blob_file(const std::filesystem::path& path, const BlobFile& file);
BlobFile load_blob_file(const std::filesystem::path& path, const std::string& expected_kind);

Blob to_blob(const Param& p);
// Copies values into `p`, checking the shape.
void from_blob(const Blob& b, Param& p);

}  // namespace nbhd::nn
