#include "nbhd/supervised/regressor.hpp"

#include <spdlog/spdlog.h>

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"
#include "nbhd/nn/io.hpp"

namespace nbhd::supervised {

using json = nlohmann::json;

Target parse_target(const std::string& s) {
  if (s == "density") return Target::density;
  if (s == "mhi") return Target::mhi;
  if (s == "education") return Target::education;
  throw ConfigError("target must be density, mhi or education (got '" + s + "')");
}

Mode parse_mode(const std::string& s) {
  if (s == "patching") return Mode::patching;
  if (s == "resizing") return Mode::resizing;
  throw ConfigError("mode must be patching or resizing (got '" + s + "')");
}

std::string to_string(Target t) {
  switch (t) {
    case Target::density: return "density";
    case Target::mhi: return "mhi";
    case Target::education: return "education";
  }
  return "?";
}

std::string to_string(Mode m) { return m == Mode::patching ? "patching" : "resizing"; }

double label_of(const dataset::DatasetItem& item, Target t) {
  switch (t) {
    case Target::density: return item.density;
    case Target::mhi: return item.mhi;
    case Target::education: return item.education;
  }
  return 0.0;
}

std::string RegressorConfig::to_json() const {
  json j = {{"target", supervised::to_string(target)},
            {"mode", supervised::to_string(mode)},
            {"batch_size", batch_size},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"patience", patience},
            {"max_epochs", max_epochs},
            {"head_widths", head_widths},
            {"dropout", dropout},
            {"dropout_layers", dropout_layers},
            {"standardize_labels", standardize_labels},
            {"in_channels", in_channels},
            {"seed", seed},
            {"backbone_path", backbone_path}};
  return j.dump();
}

RegressorConfig RegressorConfig::from_json(const std::string& text) {
  RegressorConfig c;
  try {
    const json j = json::parse(text);
    c.target = parse_target(j.at("target").get<std::string>());
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.patience = j.at("patience").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.head_widths = j.at("head_widths").get<std::vector<int>>();
    c.dropout = j.at("dropout").get<double>();
    c.dropout_layers = j.at("dropout_layers").get<int>();
    c.standardize_labels = j.at("standardize_labels").get<bool>();
    c.in_channels = j.at("in_channels").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.backbone_path = j.at("backbone_path").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("regressor config: ") + e.what());
  }
  return c;
}

void RegressorConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (in_channels != 3 && in_channels != 4) throw ConfigError("in_channels must be 3 or 4");
  for (int w : head_widths) {
    if (w < 1) throw ConfigError("head widths must be positive");
  }
}

RegressorModel::RegressorModel(RegressorConfig config, Backbone backbone)
    : config_(std::move(config)), backbone_(std::move(backbone)) {
  config_.validate();
  Rng rng(derive_seed(config_.seed, "head"));
  int in = kFeatureDim;
  std::vector<int> widths = config_.head_widths;
  widths.push_back(1);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    auto fc = std::make_unique<nn::Linear>(in, widths[i], "head.fc" + std::to_string(i + 1));
    fc->init(rng);
    head_.add(std::move(fc));
    if (i + 1 < widths.size()) {
      head_.add(std::make_unique<nn::ReLU>());
      if (static_cast<int>(i) < config_.dropout_layers && config_.dropout > 0.0) {
        head_.add(std::make_unique<nn::Dropout>(
            config_.dropout, derive_seed(config_.seed, "dropout:" + std::to_string(i))));
      }
    }
    in = widths[i];
  }
  head_.at(0).input_grad = !config_.freeze_backbone();
}

std::vector<nn::Param*> RegressorModel::all_params() {
  auto p = backbone_.params();
  for (auto* q : head_.params()) p.push_back(q);
  return p;
}

nn::Tensor RegressorModel::predict_features(const nn::Tensor& features) {
  nn::Tensor out = head_.forward(features, false);
  for (auto& v : out.data) v = static_cast<float>(v * label_scale + label_mean);
  return out;
}

nn::Tensor RegressorModel::predict_images(const std::vector<const geo::Raster*>& images) {
  return predict_features(backbone_.features(images));
}

double RegressorModel::predict_image(const geo::Raster& image) {
  return predict_images({&image}).data[0];
}

RegressorModel build_model(const RegressorConfig& config) {
  config.validate();
  if (config.backbone_path.empty()) {
    throw ConfigError("no pretrained backbone configured (supervised.backbone_path)");
  }
  return RegressorModel(config, Backbone::load(config.backbone_path, config.in_channels));
}

EarlyStopping::EarlyStopping(int patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double val_loss) {
  improved_ = val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    best_epoch_ = epoch;
  }
  return epoch - best_epoch_ >= patience_;
}

namespace {

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void append_log(const std::filesystem::path& path, const EpochLog& e) {
  if (path.empty()) return;
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  if (fresh) out << "epoch\ttrain_loss\tval_loss\ttimestamp\n";
  out << e.epoch << '\t' << format_double(e.train_loss) << '\t' << format_double(e.val_loss) << '\t'
      << e.timestamp << '\n';
}

std::vector<nn::FloatVec> snapshot(const std::vector<nn::Param*>& params) {
  std::vector<nn::FloatVec> s;
  for (auto* p : params) s.push_back(p->value);
  return s;
}

void restore(const std::vector<nn::Param*>& params, const std::vector<nn::FloatVec>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s[i];
}

void fit_label_scaling(RegressorModel& model, const std::vector<double>& y) {
  model.label_mean = 0.0;
  model.label_scale = 1.0;
  if (!model.config().standardize_labels || y.empty()) return;
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(y.size()));
  model.label_mean = mean;
  model.label_scale = sd > 0.0 ? sd : 1.0;
}

void check_finite(double loss, int epoch, std::size_t batch, const RegressorConfig& c) {
  if (!std::isfinite(loss)) {
    throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(batch) + " (target " + to_string(c.target) + ", lr " +
                         format_double(c.lr) + "); lower the learning rate or enable label standardization");
  }
}

// Shared epoch loop. `step` runs one optimisation step over the given train
// indices and returns the batch loss in label units; `validate` returns the
// validation loss in label units.
Checkpoint run_epochs(RegressorModel& model, std::size_t n_train,
                      const std::function<double(const std::vector<std::size_t>&, int, std::size_t)>& step,
                      const std::function<double()>& validate, const std::vector<nn::Param*>& tracked,
                      const TrainOptions& options) {
  const auto& cfg = model.config();
  EarlyStopping stopper(cfg.patience);
  Checkpoint ckpt;
  auto best = snapshot(tracked);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n_train; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, b + cfg.batch_size)));
      const double l = step(idx, epoch, batches);
      check_finite(l, epoch, batches, cfg);
      loss_sum += l * static_cast<double>(idx.size());
      ++batches;
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(n_train);
    e.val_loss = validate();
    if (!std::isfinite(e.val_loss)) check_finite(e.val_loss, epoch, batches, cfg);
    e.timestamp = now_iso();
    ckpt.log.push_back(e);
    append_log(options.log_path, e);
    if (options.on_epoch) options.on_epoch(e);
    const bool stop = stopper.update(epoch, e.val_loss);
    if (stopper.improved()) best = snapshot(tracked);
    ckpt.epochs_run = epoch;
    spdlog::info("epoch={} train_loss={:.6g} val_loss={:.6g} best_epoch={}", epoch, e.train_loss, e.val_loss,
                 stopper.best_epoch());
    if (stop) break;
  }
  restore(tracked, best);
  ckpt.best_epoch = stopper.best_epoch();
  ckpt.best_val_loss = stopper.best_loss();
  return ckpt;
}

double val_l1(RegressorModel& model, const nn::Tensor& x, const std::vector<double>& y) {
  const int n = x.rows();
  double acc = 0.0;
  const int bs = 256;
  for (int b = 0; b < n; b += bs) {
    const int m = std::min(bs, n - b);
    nn::Tensor chunk({m, x.shape[1]});
    std::copy(x.row(b), x.row(b) + static_cast<std::size_t>(m) * x.shape[1], chunk.data.begin());
    const nn::Tensor p = model.predict_features(chunk);
    for (int i = 0; i < m; ++i) acc += std::abs(static_cast<double>(p.data[static_cast<std::size_t>(i)]) - y[static_cast<std::size_t>(b + i)]);
  }
  return acc / n;
}

}  // namespace

Checkpoint train_head(RegressorModel& model, const nn::Tensor& train_x, const std::vector<double>& train_y,
                      const nn::Tensor& val_x, const std::vector<double>& val_y, const TrainOptions& options) {
  if (train_y.empty()) throw ConfigError("training split is empty");
  if (val_y.empty()) throw ConfigError("validation split is empty");
  if (train_x.rows() != static_cast<int>(train_y.size()) || val_x.rows() != static_cast<int>(val_y.size())) {
    throw InputError("feature/label count mismatch");
  }
  fit_label_scaling(model, train_y);
  auto params = model.head_params();
  nn::AdamW opt(params, {model.config().lr, model.config().weight_decay});
  const int f = train_x.shape[1];
  auto step = [&](const std::vector<std::size_t>& idx, int, std::size_t) {
    const int m = static_cast<int>(idx.size());
    nn::Tensor x({m, f});
    nn::Tensor y({m, 1});
    for (int i = 0; i < m; ++i) {
      std::copy(train_x.row(static_cast<int>(idx[static_cast<std::size_t>(i)])),
                train_x.row(static_cast<int>(idx[static_cast<std::size_t>(i)])) + f, x.row(i));
      y.data[static_cast<std::size_t>(i)] =
          static_cast<float>((train_y[idx[static_cast<std::size_t>(i)]] - model.label_mean) / model.label_scale);
    }
    opt.zero_grad();
    const nn::Tensor out = model.head().forward(x, true);
    nn::Tensor g;
    const double loss = nn::l1_loss(out, y, &g);
    model.head().backward(g);
    opt.step();
    return loss * model.label_scale;
  };
  auto validate = [&] { return val_l1(model, val_x, val_y); };
  return run_epochs(model, train_y.size(), step, validate, params, options);
}

Checkpoint train(RegressorModel& model, const std::vector<const dataset::DatasetItem*>& train_items,
                 const std::vector<const dataset::DatasetItem*>& val_items, const ImageLoader& load,
                 const TrainOptions& options) {
  if (train_items.empty()) throw ConfigError("training split is empty");
  if (val_items.empty()) throw ConfigError("validation split is empty");
  const auto& cfg = model.config();
  std::vector<double> train_y, val_y;
  for (auto* it : train_items) train_y.push_back(label_of(*it, cfg.target));
  for (auto* it : val_items) val_y.push_back(label_of(*it, cfg.target));

  auto features_of = [&](const std::vector<const dataset::DatasetItem*>& items) {
    nn::Tensor x({static_cast<int>(items.size()), kFeatureDim});
    for (std::size_t i = 0; i < items.size(); ++i) {
      const geo::Raster img = load(*items[i]);
      const nn::Tensor f = model.backbone().features({&img});
      std::copy(f.data.begin(), f.data.end(), x.row(static_cast<int>(i)));
    }
    return x;
  };

  if (cfg.freeze_backbone()) {
    // The backbone never changes, so its features are computed once.
    const nn::Tensor tx = features_of(train_items);
    const nn::Tensor vx = features_of(val_items);
    return train_head(model, tx, train_y, vx, val_y, options);
  }

  fit_label_scaling(model, train_y);
  auto params = model.all_params();
  nn::AdamW opt(params, {cfg.lr, cfg.weight_decay});
  auto step = [&](const std::vector<std::size_t>& idx, int, std::size_t) {
    std::vector<geo::Raster> imgs;
    imgs.reserve(idx.size());
    nn::Tensor y({static_cast<int>(idx.size()), 1});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      imgs.push_back(load(*train_items[idx[i]]));
      y.data[i] = static_cast<float>((train_y[idx[i]] - model.label_mean) / model.label_scale);
    }
    std::vector<const geo::Raster*> ptrs;
    for (const auto& im : imgs) ptrs.push_back(&im);
    opt.zero_grad();
    const nn::Tensor feats = model.backbone().forward(images_to_tensor(ptrs, cfg.in_channels), true);
    const nn::Tensor out = model.head().forward(feats, true);
    nn::Tensor g;
    const double loss = nn::l1_loss(out, y, &g);
    model.backbone().backward(model.head().backward(g));
    opt.step();
    return loss * model.label_scale;
  };
  auto validate = [&] {
    double acc = 0.0;
    for (std::size_t i = 0; i < val_items.size(); ++i) {
      const geo::Raster img = load(*val_items[i]);
      acc += std::abs(model.predict_image(img) - val_y[i]);
    }
    return acc / static_cast<double>(val_items.size());
  };
  return run_epochs(model, train_y.size(), step, validate, params, options);
}

void save_checkpoint(const std::filesystem::path& path, RegressorModel& model, const Checkpoint& ckpt) {
  nn::BlobFile f;
  f.kind = "checkpoint";
  json meta = {{"config", json::parse(model.config().to_json())},
               {"best_val_loss", ckpt.best_val_loss},
               {"best_epoch", ckpt.best_epoch},
               {"epochs_run", ckpt.epochs_run},
               {"label_mean", model.label_mean},
               {"label_scale", model.label_scale}};
  f.meta = meta.dump();
  for (auto* p : model.all_params()) f.blobs.push_back(nn::to_blob(*p));
  nn::save_blob_file(path, f);
}

RegressorModel load_checkpoint(const std::filesystem::path& path, Checkpoint* ckpt) {
  const nn::BlobFile f = nn::load_blob_file(path, "checkpoint");
  json meta;
  try {
    meta = json::parse(f.meta);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
  RegressorConfig cfg = RegressorConfig::from_json(meta.at("config").dump());
  RegressorModel model(cfg, Backbone::from_blobs(f, cfg.in_channels, "backbone."));
  for (auto* p : model.head_params()) nn::from_blob(f.get(p->name), *p);
  model.label_mean = meta.at("label_mean").get<double>();
  model.label_scale = meta.at("label_scale").get<double>();
  if (ckpt) {
    ckpt->best_val_loss = meta.at("best_val_loss").get<double>();
    ckpt->best_epoch = meta.at("best_epoch").get<int>();
    ckpt->epochs_run = meta.at("epochs_run").get<int>();
  }
  return model;
}

std::vector<Prediction> predict(RegressorModel& model, const std::vector<const dataset::DatasetItem*>& items,
                                const ImageLoader& load) {
  std::vector<Prediction> out;
  out.reserve(items.size());
  for (auto* it : items) {
    const geo::Raster img = load(*it);
    if (img.channels() < model.config().in_channels) {
      throw InputError(it->item_id + ": image has " + std::to_string(img.channels()) +
                       " bands, checkpoint expects " + std::to_string(model.config().in_channels));
    }
    out.push_back({it->item_id, it->geoid, it->split, label_of(*it, model.config().target),
                   model.predict_image(img)});
  }
  return out;
}

std::vector<HoodPrediction> aggregate_by_neighborhood(const std::vector<Prediction>& preds) {
  std::map<std::string, HoodPrediction> acc;
  for (const auto& p : preds) {
    auto& h = acc[p.geoid];
    h.geoid = p.geoid;
    h.split = p.split;
    h.truth = p.truth;
    h.prediction += p.prediction;
    ++h.items;
  }
  std::vector<HoodPrediction> out;
  for (auto& [g, h] : acc) {
    h.prediction /= h.items;
    out.push_back(h);
  }
  return out;
}

}  // namespace nbhd::supervised
