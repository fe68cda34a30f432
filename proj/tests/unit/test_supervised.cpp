#include <gtest/gtest.h>

#include <cmath>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"
#include "nbhd/nn/io.hpp"
#include "nbhd/nn/layers.hpp"
#include "nbhd/supervised/backbone.hpp"
#include "nbhd/supervised/regressor.hpp"
#include "support.hpp"

using namespace nbhd;
using namespace nbhd::supervised;

namespace {

class SupervisedFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    nn::save_blob_file(dir / "bb.bin", make_backbone_weights(5));
    Rng rng(1);
    for (int i = 0; i < 24; ++i) {
      geo::Raster img(48, 48, 3);
      const int level = static_cast<int>(rng.below(200));
      for (auto& v : img.data()) v = static_cast<std::uint8_t>(level + rng.below(50));
      images.push_back(img);
      dataset::DatasetItem it;
      it.item_id = "i" + std::to_string(i);
      it.geoid = "g" + std::to_string(i / 2);
      it.density = 10.0 * level;
      it.split = i < 16 ? "train" : "val";
      items.push_back(it);
    }
    for (const auto& it : items) (it.split == "train" ? train_items : val_items).push_back(&it);
    loader = [this](const dataset::DatasetItem& it) { return images[std::stoul(it.item_id.substr(1))]; };
  }

  RegressorConfig config(Mode mode) const {
    RegressorConfig c;
    c.mode = mode;
    c.backbone_path = (dir / "bb.bin").string();
    c.head_widths = {32, 16};
    c.dropout_layers = 1;
    c.max_epochs = 3;
    c.patience = 2;
    c.batch_size = 8;
    c.lr = 1e-3;
    c.seed = 3;
    return c;
  }

  test::TempDir dir{"supervised"};
  std::vector<geo::Raster> images;
  std::vector<dataset::DatasetItem> items;
  std::vector<const dataset::DatasetItem*> train_items, val_items;
  ImageLoader loader;
};

}  // namespace

TEST(EarlyStopping, PatienceArithmetic) {
  EarlyStopping es(5);
  const std::vector<double> losses = {10, 9, 8, 8.5, 8.2, 8.0, 8.1, 8.3, 8.4, 7.0};
  int stopped_at = -1;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const int epoch = static_cast<int>(i) + 1;
    if (es.update(epoch, losses[i])) {
      stopped_at = epoch;
      break;
    }
  }
  // Best is epoch 3; an equal loss at epoch 6 is not an improvement.
  EXPECT_EQ(es.best_epoch(), 3);
  EXPECT_EQ(stopped_at, 8);
  EXPECT_DOUBLE_EQ(es.best_loss(), 8.0);
  EXPECT_THROW(EarlyStopping(0), ConfigError);
}

TEST(EarlyStopping, PropertyStopsExactlyPatienceAfterBest) {
  Rng rng(7);
  for (int t = 0; t < 500; ++t) {
    const int patience = 1 + static_cast<int>(rng.below(8));
    EarlyStopping es(patience);
    double best = 1e300;
    int best_epoch = 0;
    for (int epoch = 1; epoch <= 200; ++epoch) {
      const double loss = rng.uniform(0, 1);
      if (loss < best) {
        best = loss;
        best_epoch = epoch;
      }
      const bool stop = es.update(epoch, loss);
      ASSERT_EQ(stop, epoch - best_epoch >= patience);
      ASSERT_EQ(es.best_epoch(), best_epoch);
      if (stop) break;
    }
  }
}

TEST_F(SupervisedFixture, ResizingTrainingLeavesBackboneUntouched) {
  auto model = build_model(config(Mode::resizing));
  const auto before = model.backbone().hash();
  const auto ck = train(model, train_items, val_items, loader);
  EXPECT_EQ(model.backbone().hash(), before);
  EXPECT_GE(ck.epochs_run, 1);
  EXPECT_EQ(static_cast<int>(ck.log.size()), ck.epochs_run);
  EXPECT_TRUE(ck.epochs_run == 3 || ck.epochs_run - ck.best_epoch == 2);

  auto tuned = build_model(config(Mode::patching));
  const auto h0 = tuned.backbone().hash();
  train(tuned, train_items, val_items, loader);
  EXPECT_NE(tuned.backbone().hash(), h0);
}

TEST_F(SupervisedFixture, CheckpointRoundTripPredictions) {
  auto model = build_model(config(Mode::patching));
  const auto ck = train(model, train_items, val_items, loader);
  save_checkpoint(dir / "m.ckpt", model, ck);
  Checkpoint ck2;
  auto loaded = load_checkpoint(dir / "m.ckpt", &ck2);
  EXPECT_EQ(ck2.best_epoch, ck.best_epoch);
  EXPECT_EQ(loaded.backbone().hash(), model.backbone().hash());
  const auto a = predict(model, val_items, loader);
  const auto b = predict(loaded, val_items, loader);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE(std::fabs(a[i].prediction - b[i].prediction), 1e-6 * std::max(1.0, std::fabs(a[i].prediction)));
  }
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST_F(SupervisedFixture, FinalLayerGradientMatchesFiniteDifferences) {
  auto cfg = config(Mode::resizing);
  cfg.dropout = 0.0;
  auto model = build_model(cfg);
  std::vector<const geo::Raster*> ptr;
  for (int i = 0; i < 8; ++i) ptr.push_back(&images[i]);
  const nn::Tensor feats = model.backbone().features(ptr);

  auto& head = model.head();
  auto* last = dynamic_cast<nn::Linear*>(&head.at(head.size() - 1));
  ASSERT_NE(last, nullptr);
  nn::Tensor act = feats;
  for (std::size_t i = 0; i + 1 < head.size(); ++i) act = head.at(i).forward(act, true);
  // Targets well away from the outputs keep the L1 loss on one linear piece.
  nn::Tensor pred0 = head.forward(feats, true);
  nn::Tensor target({8, 1});
  for (int i = 0; i < 8; ++i) target.data[i] = pred0.data[i] + (i % 2 ? 5.0f : -5.0f);
  for (auto* p : head.params()) p->zero_grad();
  nn::Tensor g;
  nn::l1_loss(head.forward(feats, true), target, &g);
  head.backward(g);

  // Reference loss of the last layer evaluated in double precision.
  const int in = last->in_features();
  std::vector<double> w(last->weight.value.begin(), last->weight.value.end());
  double b = last->bias.value[0];
  auto loss_at = [&]() {
    double acc = 0;
    for (int i = 0; i < 8; ++i) {
      double y = b;
      for (int j = 0; j < in; ++j) y += static_cast<double>(act.data[i * in + j]) * w[j];
      acc += std::fabs(y - target.data[i]);
    }
    return acc / 8;
  };
  int checked = 0;
  const double h = 1e-3;
  auto check = [&](double& v, double an, const std::string& what) {
    const double keep = v;
    v = keep + h;
    const double up = loss_at();
    v = keep - h;
    const double down = loss_at();
    v = keep;
    const double fd = (up - down) / (2 * h);
    if (std::fabs(an) < 1e-6 && std::fabs(fd) < 1e-6) return;
    EXPECT_LE(std::fabs(fd - an) / std::max(std::fabs(an), std::fabs(fd)), 1e-4) << what;
    ++checked;
  };
  for (int j = 0; j < in; ++j) check(w[j], last->weight.grad[j], "weight[" + std::to_string(j) + "]");
  check(b, last->bias.grad[0], "bias");
  // Inactive ReLU units give zero gradients on both sides; the rest must be checked.
  EXPECT_GE(checked, 4);
}

TEST(Backbone, WeightsAreDeterministicAndRequired) {
  test::TempDir dir("bb");
  nn::save_blob_file(dir / "a.bin", make_backbone_weights(5));
  nn::save_blob_file(dir / "b.bin", make_backbone_weights(5));
  auto a = Backbone::load(dir / "a.bin", 3);
  auto b = Backbone::load(dir / "b.bin", 3);
  EXPECT_EQ(a.hash(), b.hash());
  auto four = Backbone::load(dir / "a.bin", 4);
  EXPECT_EQ(four.in_channels(), 4);
  EXPECT_THROW(Backbone::load(dir / "none.bin", 3), Error);
  RegressorConfig c;
  EXPECT_THROW(build_model(c), ConfigError);
  geo::Raster img(112, 112, 3, 77);
  const auto f = a.features({&img});
  EXPECT_EQ(f.shape, (std::vector<int>{1, kFeatureDim}));
}

TEST(BlobFile, ChecksumDetectsCorruption) {
  test::TempDir dir("blob");
  nn::BlobFile f;
  f.kind = "features";
  f.meta = "{}";
  f.blobs.push_back({"x", {2, 2}, {1, 2, 3, 4}});
  nn::save_blob_file(dir / "f.bin", f);
  const auto g = nn::load_blob_file(dir / "f.bin", "features");
  EXPECT_EQ(g.get("x").data, f.blobs[0].data);
  EXPECT_THROW(nn::load_blob_file(dir / "f.bin", "checkpoint"), Error);
  std::string bytes = read_file(dir / "f.bin");
  bytes[bytes.size() / 2] ^= 0x5a;
  write_file_atomic(dir / "f.bin", bytes);
  EXPECT_THROW(nn::load_blob_file(dir / "f.bin", "features"), Error);
}
