#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "nbhd/bovw/cluster.hpp"
#include "nbhd/bovw/features.hpp"
#include "nbhd/bovw/forest.hpp"
#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/eval/explain.hpp"
#include "support.hpp"

using namespace nbhd;
using namespace nbhd::bovw;

namespace {

Eigen::MatrixXd blobs(const Eigen::MatrixXd& centres, int per, double sigma, Rng& rng) {
  Eigen::MatrixXd x(centres.rows() * per, centres.cols());
  for (Eigen::Index c = 0; c < centres.rows(); ++c)
    for (int i = 0; i < per; ++i)
      for (Eigen::Index j = 0; j < centres.cols(); ++j) x(c * per + i, j) = centres(c, j) + sigma * rng.normal();
  return x;
}

double wcss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, const std::vector<int>& a) {
  double s = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += (x.row(i) - c.row(a[i])).squaredNorm();
  return s;
}

nn::Tensor random_features(int n, int d, Rng& rng) {
  nn::Tensor t({n, d});
  // Three latent groups so clustering has structure to find.
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) t.row(i)[j] = static_cast<float>((i % 3) * ((j % 3) == (i % 3) ? 3.0 : 0.0) + rng.normal());
  return t;
}

}  // namespace

TEST(KMeans, WcssNeverIncreases) {
  Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    Eigen::MatrixXd x(200, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * (1 + (i % 7));
    const int k = 2 + static_cast<int>(rng.below(12));
    const auto r = kmeans_cluster(x, k, derive_seed(5, std::to_string(t)));
    ASSERT_FALSE(r.wcss_history.empty());
    for (std::size_t i = 1; i < r.wcss_history.size(); ++i) {
      ASSERT_LE(r.wcss_history[i], r.wcss_history[i - 1] * (1 + 1e-12));
    }
    EXPECT_NEAR(r.wcss, wcss(x, r.centroids, r.assignments), 1e-6 * r.wcss);
    EXPECT_EQ(r.assignments, assign_nearest(x, r.centroids));
  }
}

TEST(KMeans, RecoversSeparatedBlobs) {
  Rng rng(2);
  Eigen::MatrixXd centres(4, 3);
  centres << 0, 0, 0, 20, 0, 0, 0, 20, 0, 0, 0, 20;
  const double sigma = 1.0;
  const Eigen::MatrixXd x = blobs(centres, 2000, sigma, rng);
  const auto r = kmeans_cluster(x, 4, 11, {100, 3});
  for (Eigen::Index c = 0; c < 4; ++c) {
    double best = 1e300;
    for (Eigen::Index j = 0; j < 4; ++j) best = std::min(best, (r.centroids.row(j) - centres.row(c)).norm());
    EXPECT_LT(best, 0.1 * sigma) << "centre " << c;
  }
}

TEST(KMeans, InputChecksAndTies) {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 2;
  EXPECT_THROW(kmeans_cluster(x, 4, 1), InputError);
  EXPECT_THROW(kmeans_cluster(x, 0, 1), InputError);
  x(1, 0) = std::nan("");
  EXPECT_THROW(kmeans_cluster(x, 2, 1), InputError);
  Eigen::MatrixXd c(2, 1);
  c << -1, 1;
  Eigen::MatrixXd p(1, 1);
  p << 0;
  EXPECT_EQ(assign_nearest(p, c)[0], 0);
}

TEST(KMeans, DuplicatedPointsStillFillClusters) {
  Eigen::MatrixXd x(50, 2);
  for (int i = 0; i < 50; ++i) x.row(i) << (i < 45 ? 0.0 : 10.0 + i), 0.0;
  const auto r = kmeans_cluster(x, 5, 3);
  std::set<int> used(r.assignments.begin(), r.assignments.end());
  EXPECT_GE(used.size(), 5u);
}

TEST(HoodFeatures, FrequencySumsToOne) {
  Rng rng(9);
  for (int t = 0; t < 1000; ++t) {
    const int k = 1 + static_cast<int>(rng.below(40));
    const int n = 1 + static_cast<int>(rng.below(300));
    std::vector<int> a(n);
    std::vector<std::string> g(n);
    for (int i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.below(k));
      g[i] = "h" + std::to_string(rng.below(12));
    }
    const auto f = hood_features(Eigen::MatrixXd::Zero(n, 2), a, Eigen::MatrixXd::Zero(k, 2), g, FeatureMode::frequency);
    for (Eigen::Index h = 0; h < f.x.rows(); ++h) {
      ASSERT_NEAR(f.x.row(h).sum(), 1.0, 1e-9);
      ASSERT_GE(f.x.row(h).minCoeff(), 0.0);
    }
  }
}

TEST(HoodFeatures, DistanceModeAndExclusions) {
  Eigen::MatrixXd z(3, 1), c(2, 1);
  z << 0, 2, 10;
  c << 0, 4;
  const std::vector<std::string> g = {"a", "a", "b"};
  const auto mean = hood_features(z, {0, 0, 1}, c, g, FeatureMode::distance, {"a", "b", "c"});
  ASSERT_EQ(mean.geoids, (std::vector<std::string>{"a", "b"}));
  EXPECT_DOUBLE_EQ(mean.x(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(mean.x(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(mean.x(1, 1), 6.0);
  ASSERT_EQ(mean.excluded.size(), 1u);
  EXPECT_EQ(mean.excluded[0], (std::pair<std::string, std::string>{"c", "no_patches"}));
  const auto mn = hood_features(z, {0, 0, 1}, c, g, FeatureMode::distance, {}, true);
  EXPECT_DOUBLE_EQ(mn.x(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(mn.x(0, 1), 2.0);
}

TEST(Autoencoder, TrainsAndRoundTrips) {
  test::TempDir dir("ae");
  Rng rng(4);
  const nn::Tensor tr = random_features(300, 24, rng), va = random_features(60, 24, rng);
  AutoencoderOptions o;
  o.hidden = {32, 16, 12};
  o.max_epochs = 15;
  o.seed = 8;
  AutoencoderReport rep;
  auto m = train_autoencoder(tr, va, 4, o, &rep);
  EXPECT_LT(rep.best_val_loss, rep.val_loss.front() + 1e-12);
  fit_kmeans(*m, tr, 3, 1);
  EXPECT_EQ(m->k(), 3);
  m->save(dir / "c.bin");
  auto back = ClusterModel::load(dir / "c.bin");
  EXPECT_EQ(back->assign(va), m->assign(va));
  const nn::Tensor za = m->encode(va), zb = back->encode(va);
  for (std::size_t i = 0; i < za.data.size(); ++i) ASSERT_FLOAT_EQ(za.data[i], zb.data[i]);
}

TEST(Dec, DistanceTermDoesNotGrow) {
  Rng rng(6);
  const nn::Tensor tr = random_features(240, 24, rng), va = random_features(40, 24, rng);
  AutoencoderOptions o;
  o.hidden = {32, 16, 12};
  // DEC starts from a converged stage 1.
  o.max_epochs = 300;
  o.patience = 10;
  o.seed = 1;
  for (double lambda : {0.1, 1.0}) {
    auto m = train_autoencoder(tr, va, 4, o);
    DecOptions d;
    d.lambda = lambda;
    d.max_epochs = 15;
    d.seed = 2;
    const auto rep = train_dec(*m, tr, 5, d);
    EXPECT_LE(rep.distance_final, rep.distance_init) << "lambda " << lambda;
    EXPECT_EQ(m->k(), 5);
    EXPECT_EQ(m->method, ClusterMethod::dec);
  }
}

TEST(Dec, MoreClustersThanSamples) {
  Rng rng(6);
  const nn::Tensor tr = random_features(8, 10, rng);
  AutoencoderOptions o;
  o.hidden = {16, 8, 6};
  o.max_epochs = 2;
  auto m = train_autoencoder(tr, tr, 2, o);
  DecOptions d;
  d.max_epochs = 3;
  const auto rep = train_dec(*m, tr, 12, d);
  EXPECT_EQ(m->k(), 12);
  EXPECT_TRUE(rep.collapsed || !rep.warnings.empty() || rep.epochs > 0);
}

TEST(Forest, FitsAndPersists) {
  test::TempDir dir("rf");
  Rng rng(3);
  Eigen::MatrixXd x(300, 4);
  std::vector<double> y(300);
  for (int i = 0; i < 300; ++i) {
    for (int j = 0; j < 4; ++j) x(i, j) = rng.uniform(0, 1);
    y[i] = 10 * x(i, 0) + (x(i, 1) > 0.5 ? 5 : 0) + 0.1 * rng.normal();
  }
  RandomForest rf;
  ForestParams p;
  p.n_trees = 30;
  p.seed = 4;
  rf.fit(x, y, p);
  const auto pred = rf.predict(x);
  double ss = 0, st = 0, m = 0;
  for (double v : y) m += v / y.size();
  for (int i = 0; i < 300; ++i) {
    ss += (pred[i] - y[i]) * (pred[i] - y[i]);
    st += (y[i] - m) * (y[i] - m);
  }
  EXPECT_GT(1 - ss / st, 0.9);
  rf.save(dir / "f.bin");
  const auto back = RandomForest::load(dir / "f.bin");
  EXPECT_EQ(back.predict(x), pred);
  RandomForest again;
  again.fit(x, y, p);
  EXPECT_EQ(again.predict(x), pred);
}

TEST(Forest, GridSelectionPrefersBestValidation) {
  Rng rng(5);
  Eigen::MatrixXd x(200, 3), xv(80, 3);
  std::vector<double> y(200), yv(80);
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.uniform(0, 1);
    y[i] = std::sin(6 * x(i, 0)) + x(i, 2);
  }
  for (int i = 0; i < 80; ++i) {
    for (int j = 0; j < 3; ++j) xv(i, j) = rng.uniform(0, 1);
    yv[i] = std::sin(6 * xv(i, 0)) + xv(i, 2);
  }
  ForestGrid g;
  g.n_trees = {20};
  g.max_depth = {1, 8};
  g.min_leaf = {1};
  const auto s = fit_regressor(x, y, xv, yv, g, 1);
  ASSERT_EQ(s.tried.size(), 2u);
  EXPECT_EQ(s.params.max_depth, 8);
  EXPECT_GE(s.val_r2, s.tried[0].second);
}

TEST(TreeShap, MatchesBruteForceAndIsComplete) {
  Rng rng(12);
  const int d = 6;
  Eigen::MatrixXd x(150, d);
  std::vector<double> y(150);
  for (int i = 0; i < 150; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.uniform(0, 1);
    y[i] = 3 * x(i, 0) * x(i, 1) + (x(i, 2) > 0.3 ? 2 : -1) + x(i, 5);
  }
  RandomForest rf;
  ForestParams p;
  p.n_trees = 10;
  p.max_depth = 6;
  p.seed = 2;
  rf.fit(x, y, p);
  const Eigen::MatrixXd bg = x.topRows(20);
  for (int r = 100; r < 110; ++r) {
    std::vector<double> xr(d);
    for (int j = 0; j < d; ++j) xr[j] = x(r, j);
    const auto fast = eval::tree_shap(rf, xr, bg);
    const auto slow = eval::tree_shap_bruteforce(rf, xr, bg);
    double sum = fast.baseline;
    for (int j = 0; j < d; ++j) {
      EXPECT_NEAR(fast.values[j], slow.values[j], 1e-9);
      sum += fast.values[j];
    }
    EXPECT_NEAR(sum, fast.prediction, 1e-9);
    EXPECT_NEAR(fast.prediction, rf.predict_row(xr.data()), 1e-12);
    // Feature 4 carries no signal; feature 3 and 4 are never useful splits.
    EXPECT_NEAR(fast.baseline, slow.baseline, 1e-12);
  }
}

TEST(TreeShap, UnusedFeatureGetsZero) {
  Rng rng(1);
  Eigen::MatrixXd x(100, 3);
  std::vector<double> y(100);
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.uniform(0, 1);
    y[i] = x(i, 0);
  }
  RandomForest rf;
  ForestParams p;
  p.n_trees = 5;
  p.mtry_fraction = 1.0;
  p.seed = 1;
  // Make feature 2 constant so no tree can split on it.
  x.col(2).setConstant(0.5);
  rf.fit(x, y, p);
  const auto a = eval::tree_shap(rf, {0.9, 0.1, 0.5}, x.topRows(10));
  EXPECT_EQ(a.values[2], 0.0);
  EXPECT_GT(a.values[0], 0.0);
}
