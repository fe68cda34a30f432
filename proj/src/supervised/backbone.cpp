#include "nbhd/supervised/backbone.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"

namespace nbhd::supervised {

namespace {

struct ConvSpec {
  const char* name;
  int cin, cout, k, stride, pad;
};

// Input channels of the stem are filled in at build time.
constexpr ConvSpec kLayers[] = {
    {"conv1", 3, 16, 5, 4, 2},   {"conv2", 16, 32, 3, 2, 1}, {"conv3", 32, 64, 3, 2, 1},
    {"conv4", 64, 128, 3, 2, 1}, {"conv5", 128, kFeatureDim, 1, 1, 0},
};

nn::Conv2d* conv_at(nn::Sequential& net, std::size_t i) {
  return dynamic_cast<nn::Conv2d*>(&net.at(2 * i));
}

}  // namespace

void Backbone::build(int in_channels) {
  if (in_channels != 3 && in_channels != 4) throw ConfigError("backbone input must have 3 or 4 channels");
  in_channels_ = in_channels;
  net_ = nn::Sequential();
  for (const auto& s : kLayers) {
    const int cin = (&s == &kLayers[0]) ? in_channels : s.cin;
    net_.add(std::make_unique<nn::Conv2d>(cin, s.cout, s.k, s.stride, s.pad, std::string("backbone.") + s.name));
    net_.add(std::make_unique<nn::ReLU>());
  }
  net_.add(std::make_unique<nn::GlobalAvgPool>());
}

Backbone Backbone::from_blobs(const nn::BlobFile& file, int in_channels, const std::string& prefix) {
  Backbone b;
  b.build(in_channels);
  for (std::size_t i = 0; i < std::size(kLayers); ++i) {
    nn::Conv2d* conv = conv_at(b.net_, i);
    const std::string base = prefix + kLayers[i].name;
    const nn::Blob& w = file.get(base + ".weight");
    const nn::Blob& bias = file.get(base + ".bias");
    nn::from_blob(bias, conv->bias);
    if (i == 0 && w.shape.size() == 2 && w.shape[1] == 3 * 25 && in_channels == 4) {
      // Widen: extra band gets the mean of the three colour filters.
      auto& dst = conv->weight.value;
      const int k2 = 25;
      for (int o = 0; o < w.shape[0]; ++o) {
        for (int t = 0; t < k2; ++t) {
          float mean = 0.0f;
          for (int c = 0; c < 3; ++c) {
            const float v = w.data[static_cast<std::size_t>(o) * 75 + c * k2 + t];
            dst[static_cast<std::size_t>(o) * 100 + c * k2 + t] = v;
            mean += v / 3.0f;
          }
          dst[static_cast<std::size_t>(o) * 100 + 3 * k2 + t] = mean;
        }
      }
    } else {
      nn::from_blob(w, conv->weight);
    }
  }
  return b;
}

Backbone Backbone::load(const std::filesystem::path& weights, int in_channels) {
  if (!std::filesystem::exists(weights)) {
    throw MissingArtifactError("pretrained backbone weights not found at " + weights.string() +
                               " (create them with `nbhd make-backbone --out " + weights.string() + "`)");
  }
  return from_blobs(nn::load_blob_file(weights, "backbone"), in_channels, "backbone.");
}

nn::Tensor Backbone::features(const std::vector<const geo::Raster*>& images) {
  nn::Tensor out({static_cast<int>(images.size()), kFeatureDim});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const nn::Tensor f = net_.forward(images_to_tensor({images[i]}, in_channels_), false);
    std::copy(f.data.begin(), f.data.end(), out.row(static_cast<int>(i)));
  }
  return out;
}

nn::BlobFile make_backbone_weights(std::uint64_t seed) {
  nn::BlobFile file;
  file.kind = "backbone";
  file.meta = nlohmann::json{{"seed", seed}, {"feature_dim", kFeatureDim}, {"in_channels", 3}}.dump();

  // Stem: 16 designed 5x5 filters over RGB.
  const int k = 5;
  nn::FloatVec stem(static_cast<std::size_t>(16) * 3 * k * k, 0.0f);
  auto set = [&](int o, int c, int y, int x, double v) {
    stem[static_cast<std::size_t>(o) * 75 + static_cast<std::size_t>(c) * 25 + y * k + x] += static_cast<float>(v);
  };
  const double box = 1.0 / 25.0;
  for (int y = 0; y < k; ++y) {
    for (int x = 0; x < k; ++x) {
      for (int c = 0; c < 3; ++c) {
        set(0, c, y, x, box / 3.0);   // brightness
        set(1, c, y, x, -box / 3.0);  // darkness
      }
      set(2, 0, y, x, box);  // red - green
      set(2, 1, y, x, -box);
      set(3, 0, y, x, -box);  // green - red
      set(3, 1, y, x, box);
      set(4, 2, y, x, box);  // blue - yellow
      set(4, 0, y, x, -box / 2);
      set(4, 1, y, x, -box / 2);
      set(5, 2, y, x, -box);  // yellow - blue
      set(5, 0, y, x, box / 2);
      set(5, 1, y, x, box / 2);
    }
  }
  // Oriented first derivatives of a Gaussian on luminance, both polarities.
  const double sigma = 1.2;
  for (int a = 0; a < 4; ++a) {
    const double th = a * std::numbers::pi / 4.0;
    double norm = 0.0;
    std::vector<double> g(25);
    for (int y = 0; y < k; ++y) {
      for (int x = 0; x < k; ++x) {
        const double dx = x - 2.0;
        const double dy = y - 2.0;
        const double u = dx * std::cos(th) + dy * std::sin(th);
        g[static_cast<std::size_t>(y * k + x)] = -u * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        norm += std::abs(g[static_cast<std::size_t>(y * k + x)]);
      }
    }
    for (int y = 0; y < k; ++y) {
      for (int x = 0; x < k; ++x) {
        const double v = 2.0 * g[static_cast<std::size_t>(y * k + x)] / norm;
        for (int c = 0; c < 3; ++c) {
          set(6 + 2 * a, c, y, x, v / 3.0);
          set(7 + 2 * a, c, y, x, -v / 3.0);
        }
      }
    }
  }
  // Centre-surround on luminance.
  for (int y = 0; y < k; ++y) {
    for (int x = 0; x < k; ++x) {
      const double r2 = (x - 2.0) * (x - 2.0) + (y - 2.0) * (y - 2.0);
      const double v = (r2 <= 1.0 ? 1.0 / 5.0 : 0.0) - 1.0 / 25.0;
      for (int c = 0; c < 3; ++c) {
        set(14, c, y, x, v);
        set(15, c, y, x, -v);
      }
    }
  }
  file.blobs.push_back({"backbone.conv1.weight", {16, 75}, stem});
  file.blobs.push_back({"backbone.conv1.bias", {16}, nn::FloatVec(16, 0.0f)});

  Rng rng(derive_seed(seed, "backbone"));
  for (std::size_t i = 1; i < std::size(kLayers); ++i) {
    const auto& s = kLayers[i];
    const int fan_in = s.cin * s.k * s.k;
    const double sd = std::sqrt(2.0 / fan_in);
    nn::FloatVec w(static_cast<std::size_t>(s.cout) * fan_in);
    for (auto& v : w) v = static_cast<float>(rng.normal(0.0, sd));
    file.blobs.push_back({std::string("backbone.") + s.name + ".weight", {s.cout, fan_in}, std::move(w)});
    file.blobs.push_back({std::string("backbone.") + s.name + ".bias", {s.cout},
                          nn::FloatVec(static_cast<std::size_t>(s.cout), 0.0f)});
  }
  return file;
}

nn::Tensor images_to_tensor(const std::vector<const geo::Raster*>& images, int channels) {
  if (images.empty()) throw InputError("no images");
  const int h = images.front()->height();
  const int w = images.front()->width();
  nn::Tensor t({static_cast<int>(images.size()), channels, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const geo::Raster& img = *images[n];
    if (img.height() != h || img.width() != w) throw InputError("images in a batch must share dimensions");
    if (img.channels() < channels) {
      throw InputError("image has " + std::to_string(img.channels()) + " bands but the model expects " +
                       std::to_string(channels));
    }
    float* dst = t.data.data() + n * channels * hw;
    const std::uint8_t* src = img.data().data();
    const int ic = img.channels();
    for (std::size_t p = 0; p < hw; ++p) {
      for (int c = 0; c < channels; ++c) {
        dst[c * hw + p] = (static_cast<float>(src[p * ic + c]) / 255.0f - 0.5f) * 4.0f;
      }
    }
  }
  return t;
}

}  // namespace nbhd::supervised
