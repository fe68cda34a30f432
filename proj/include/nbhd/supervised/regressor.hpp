#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nbhd/dataset/dataset.hpp"
#include "nbhd/geo/raster.hpp"
#include "nbhd/nn/layers.hpp"
#include "nbhd/supervised/backbone.hpp"

namespace nbhd::supervised {

enum class Target { density, mhi, education };
enum class Mode { patching, resizing };

Target parse_target(const std::string& s);
Mode parse_mode(const std::string& s);
std::string to_string(Target t);
std::string to_string(Mode m);
double label_of(const dataset::DatasetItem& item, Target t);

struct RegressorConfig {
  Target target = Target::density;
  Mode mode = Mode::resizing;
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int patience = 5;
  int max_epochs = 100;
  std::vector<int> head_widths = {1024, 512, 256, 128, 64, 32};  // then 1
  double dropout = 0.30;
  int dropout_layers = 4;  // dropout after the first N head layers
  bool standardize_labels = false;
  int in_channels = 3;
  std::uint64_t seed = 0;
  std::string backbone_path;

  // Resizing trains the head only; patching trains every weight.
  bool freeze_backbone() const { return mode == Mode::resizing; }
  std::string to_json() const;
  static RegressorConfig from_json(const std::string& text);
  void validate() const;
};

class RegressorModel {
 public:
  RegressorModel(RegressorConfig config, Backbone backbone);

  const RegressorConfig& config() const { return config_; }
  Backbone& backbone() { return backbone_; }
  nn::Sequential& head() { return head_; }
  std::vector<nn::Param*> head_params() { return head_.params(); }
  std::vector<nn::Param*> all_params();

  // Eval-mode prediction in label units.
  nn::Tensor predict_images(const std::vector<const geo::Raster*>& images);
  double predict_image(const geo::Raster& image);
  // Head applied to precomputed backbone features (N x 2048), label units.
  nn::Tensor predict_features(const nn::Tensor& features);

  double label_mean = 0.0;
  double label_scale = 1.0;

 private:
  RegressorConfig config_;
  Backbone backbone_;
  nn::Sequential head_;
};

// Backbone from config.backbone_path (MissingArtifactError if absent) plus a
// freshly seeded head.
RegressorModel build_model(const RegressorConfig& config);

// Stops once `patience` epochs pass without a strictly lower validation loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  // Records the loss of epoch `epoch` (1-based); true when training must stop.
  bool update(int epoch, double val_loss);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_;
  bool improved_ = false;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::string timestamp;
};

struct Checkpoint {
  double best_val_loss = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<EpochLog> log;
};

using ImageLoader = std::function<geo::Raster(const dataset::DatasetItem&)>;

struct TrainOptions {
  // Appended one row per epoch when set.
  std::filesystem::path log_path;
  // Called after every epoch (tests use it to observe the trajectory).
  std::function<void(const EpochLog&)> on_epoch;
};

// Per epoch: one shuffled pass over train, then a validation pass (L1). The
// weights of the best validation epoch are restored before returning.
Checkpoint train(RegressorModel& model, const std::vector<const dataset::DatasetItem*>& train_items,
                 const std::vector<const dataset::DatasetItem*>& val_items, const ImageLoader& load,
                 const TrainOptions& options = {});

// Same loop on precomputed backbone features (frozen backbone only).
Checkpoint train_head(RegressorModel& model, const nn::Tensor& train_x, const std::vector<double>& train_y,
                      const nn::Tensor& val_x, const std::vector<double>& val_y,
                      const TrainOptions& options = {});

void save_checkpoint(const std::filesystem::path& path, RegressorModel& model, const Checkpoint& ckpt);
RegressorModel load_checkpoint(const std::filesystem::path& path, Checkpoint* ckpt = nullptr);

struct Prediction {
  std::string item_id;
  std::string geoid;
  std::string split;
  double truth = 0.0;
  double prediction = 0.0;
};

std::vector<Prediction> predict(RegressorModel& model, const std::vector<const dataset::DatasetItem*>& items,
                                const ImageLoader& load);

struct HoodPrediction {
  std::string geoid;
  std::string split;
  double truth = 0.0;
  double prediction = 0.0;  // mean over the neighborhood's items
  int items = 0;
};

std::vector<HoodPrediction> aggregate_by_neighborhood(const std::vector<Prediction>& preds);

}  // namespace nbhd::supervised
