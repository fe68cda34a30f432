#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nbhd::bovw {

struct ForestParams {
  int n_trees = 100;
  int max_depth = -1;  // -1: grow until leaves are pure or too small
  int min_leaf = 1;
  double mtry_fraction = 1.0 / 3.0;
  bool bootstrap = true;
  std::uint64_t seed = 0;

  std::string to_string() const;
};

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // mean target of the training rows reaching the node
  double cover = 0.0;  // number of (bootstrap) training rows reaching the node
  bool leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at 0
  double predict(const double* x) const;
  int depth() const;
};

class RandomForest {
 public:
  void fit(const Eigen::MatrixXd& x, const std::vector<double>& y, const ForestParams& params);
  double predict_row(const double* x) const;
  std::vector<double> predict(const Eigen::MatrixXd& x) const;

  const std::vector<Tree>& trees() const { return trees_; }
  std::vector<Tree>& trees() { return trees_; }
  int n_features() const { return n_features_; }
  void set_n_features(int n) { n_features_ = n; }
  const ForestParams& params() const { return params_; }

  void save(const std::filesystem::path& path) const;
  static RandomForest load(const std::filesystem::path& path);

 private:
  std::vector<Tree> trees_;
  int n_features_ = 0;
  ForestParams params_;
};

struct ForestGrid {
  std::vector<int> n_trees = {100};
  std::vector<int> max_depth = {4, 8, -1};
  std::vector<int> min_leaf = {1, 3, 5};
};

struct ForestSelection {
  RandomForest model;
  ForestParams params;
  double val_r2 = 0.0;
  double val_mae = 0.0;
  std::vector<std::pair<ForestParams, double>> tried;  // params, validation R^2
};

// Fits one forest per grid point on the training rows and keeps the one with
// the best validation R^2 (earlier grid points win ties).
ForestSelection fit_regressor(const Eigen::MatrixXd& x_train, const std::vector<double>& y_train,
                              const Eigen::MatrixXd& x_val, const std::vector<double>& y_val,
                              const ForestGrid& grid, std::uint64_t seed);

}  // namespace nbhd::bovw
