#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nbhd/geo/raster.hpp"
#include "nbhd/nn/io.hpp"
#include "nbhd/nn/layers.hpp"

namespace nbhd::supervised {

inline constexpr int kFeatureDim = 2048;

// Strided convolutional feature extractor ending in global average pooling:
//   conv5x5/4 (C->16), conv3x3/2 (16->32), conv3x3/2 (32->64),
//   conv3x3/2 (64->128), conv1x1 (128->2048), each followed by ReLU.
// Weights always come from a file; there is no random fallback.
class Backbone {
 public:
  // Loads 3-channel weights; with in_channels == 4 the first convolution is
  // widened by giving the extra band the mean of the RGB filters.
  static Backbone load(const std::filesystem::path& weights, int in_channels);
  static Backbone from_blobs(const nn::BlobFile& file, int in_channels, const std::string& prefix);

  nn::Tensor forward(const nn::Tensor& images, bool train) { return net_.forward(images, train); }
  nn::Tensor backward(const nn::Tensor& grad) { return net_.backward(grad); }
  // Eval-mode features, one image at a time to bound memory.
  nn::Tensor features(const std::vector<const geo::Raster*>& images);

  std::vector<nn::Param*> params() { return net_.params(); }
  std::uint64_t hash() { return nn::hash_params(params()); }
  int in_channels() const { return in_channels_; }

  Backbone(Backbone&&) = default;
  Backbone& operator=(Backbone&&) = default;

 private:
  Backbone() = default;
  void build(int in_channels);
  nn::Sequential net_;
  int in_channels_ = 3;
};

// The deterministic stand-in for pretrained weights: a hand-designed stem
// (colour-opponent, oriented-edge and centre-surround filters) and He-scaled
// seeded deeper layers.
nn::BlobFile make_backbone_weights(std::uint64_t seed);

// NCHW float tensor from 8-bit images, scaled to (v/255 - 0.5) / 0.25.
// All images must share dimensions; `channels` selects the leading bands.
nn::Tensor images_to_tensor(const std::vector<const geo::Raster*>& images, int channels);

}  // namespace nbhd::supervised
