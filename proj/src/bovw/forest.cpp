#include "nbhd/bovw/forest.hpp"

#include <spdlog/spdlog.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/eval/score.hpp"
#include "nbhd/nn/io.hpp"

namespace nbhd::bovw {

using json = nlohmann::json;

std::string ForestParams::to_string() const {
  return "trees=" + std::to_string(n_trees) + " depth=" + (max_depth < 0 ? std::string("none") : std::to_string(max_depth)) +
         " min_leaf=" + std::to_string(min_leaf);
}

double Tree::predict(const double* x) const {
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].leaf()) {
    const TreeNode& n = nodes[static_cast<std::size_t>(i)];
    i = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].leaf()) continue;
    d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
    d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    best = std::max(best, d[i] + 1);
  }
  return best;
}

namespace {

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, const std::vector<double>& y, const ForestParams& p, Rng& rng)
      : x_(x), y_(y), p_(p), rng_(rng) {
    const int d = static_cast<int>(x.cols());
    mtry_ = std::clamp(static_cast<int>(std::floor(p.mtry_fraction * d)), 1, std::max(1, d));
    features_.resize(static_cast<std::size_t>(d));
    std::iota(features_.begin(), features_.end(), 0);
  }

  Tree build(std::vector<int> rows) {
    Tree t;
    grow(t, rows, 0);
    return t;
  }

 private:
  int grow(Tree& t, std::vector<int>& rows, int depth) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    double sum = 0.0;
    for (int r : rows) sum += y_[static_cast<std::size_t>(r)];
    const double n = static_cast<double>(rows.size());
    t.nodes[static_cast<std::size_t>(id)].value = sum / n;
    t.nodes[static_cast<std::size_t>(id)].cover = n;

    if ((p_.max_depth >= 0 && depth >= p_.max_depth) || static_cast<int>(rows.size()) < 2 * p_.min_leaf) return id;

    // Partial Fisher-Yates: the first mtry entries are the candidate features.
    for (int i = 0; i < mtry_; ++i) {
      const std::size_t j = static_cast<std::size_t>(i) + rng_.below(features_.size() - static_cast<std::size_t>(i));
      std::swap(features_[static_cast<std::size_t>(i)], features_[j]);
    }
    double best_gain = 1e-12;
    int best_f = -1;
    double best_thr = 0.0;
    std::vector<std::pair<double, double>> vy(rows.size());
    double sq_total = 0.0;
    for (int r : rows) sq_total += y_[static_cast<std::size_t>(r)] * y_[static_cast<std::size_t>(r)];
    const double sse_parent = sq_total - sum * sum / n;
    if (sse_parent <= 1e-12 * std::max(1.0, sq_total)) return id;
    for (int fi = 0; fi < mtry_; ++fi) {
      const int f = features_[static_cast<std::size_t>(fi)];
      for (std::size_t i = 0; i < rows.size(); ++i) vy[i] = {x_(rows[i], f), y_[static_cast<std::size_t>(rows[i])]};
      std::sort(vy.begin(), vy.end());
      if (vy.front().first == vy.back().first) continue;
      double ls = 0.0;
      for (std::size_t i = 0; i + 1 < vy.size(); ++i) {
        ls += vy[i].second;
        const int nl = static_cast<int>(i) + 1;
        const int nr = static_cast<int>(vy.size()) - nl;
        if (vy[i].first == vy[i + 1].first || nl < p_.min_leaf || nr < p_.min_leaf) continue;
        const double rs = sum - ls;
        // SSE reduction = sum_l^2/n_l + sum_r^2/n_r - sum^2/n
        const double gain = ls * ls / nl + rs * rs / nr - sum * sum / n;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_thr = 0.5 * (vy[i].first + vy[i + 1].first);
        }
      }
    }
    if (best_f < 0) return id;
    std::vector<int> left, right;
    for (int r : rows) (x_(r, best_f) <= best_thr ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(t, left, depth + 1);
    const int rgt = grow(t, right, depth + 1);
    TreeNode& node = t.nodes[static_cast<std::size_t>(id)];
    node.feature = best_f;
    node.threshold = best_thr;
    node.left = l;
    node.right = rgt;
    return id;
  }

  const Eigen::MatrixXd& x_;
  const std::vector<double>& y_;
  const ForestParams& p_;
  Rng& rng_;
  int mtry_ = 1;
  std::vector<int> features_;
};

}  // namespace

void RandomForest::fit(const Eigen::MatrixXd& x, const std::vector<double>& y, const ForestParams& params) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw InputError("random forest: " + std::to_string(x.rows()) + " feature rows vs " + std::to_string(y.size()) +
                     " labels");
  }
  if (x.rows() == 0) throw InputError("random forest: no training rows");
  if (params.n_trees < 1 || params.min_leaf < 1) throw ConfigError("random forest needs n_trees >= 1 and min_leaf >= 1");
  if (!x.allFinite()) throw InputError("random forest: non-finite features");
  params_ = params;
  n_features_ = static_cast<int>(x.cols());
  trees_.clear();
  const int n = static_cast<int>(x.rows());
  for (int t = 0; t < params.n_trees; ++t) {
    Rng rng(derive_seed(params.seed, "tree:" + std::to_string(t)));
    std::vector<int> rows(static_cast<std::size_t>(n));
    if (params.bootstrap) {
      for (auto& r : rows) r = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    TreeBuilder b(x, y, params, rng);
    trees_.push_back(b.build(std::move(rows)));
  }
}

double RandomForest::predict_row(const double* x) const {
  double s = 0.0;
  for (const auto& t : trees_) s += t.predict(x);
  return s / static_cast<double>(trees_.size());
}

std::vector<double> RandomForest::predict(const Eigen::MatrixXd& x) const {
  if (trees_.empty()) throw InternalError("random forest used before fit");
  if (x.cols() != n_features_) {
    throw InputError("random forest expects " + std::to_string(n_features_) + " features, got " +
                     std::to_string(x.cols()));
  }
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = x;
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = predict_row(rm.row(i).data());
  return out;
}

constexpr int kNodeCols = 18;

void RandomForest::save(const std::filesystem::path& path) const {
  json j;
  j["n_features"] = n_features_;
  j["params"] = {{"n_trees", params_.n_trees}, {"max_depth", params_.max_depth}, {"min_leaf", params_.min_leaf},
                 {"mtry_fraction", params_.mtry_fraction}, {"bootstrap", params_.bootstrap}, {"seed", params_.seed}};
  nn::BlobFile f;
  f.kind = "forest";
  std::vector<int> offsets;
  // Node table: feature, threshold, left, right, value, cover. Each double
  // is stored as three floats whose sum is exact (24 + 24 + 24 >= 53 bits).
  nn::FloatVec table;
  auto put = [&](double v) {
    const float hi = static_cast<float>(v);
    const double r = v - static_cast<double>(hi);
    const float mid = static_cast<float>(r);
    table.push_back(hi);
    table.push_back(mid);
    table.push_back(static_cast<float>(r - static_cast<double>(mid)));
  };
  int total = 0;
  for (const auto& t : trees_) {
    offsets.push_back(total);
    for (const auto& n : t.nodes) {
      put(n.feature);
      put(n.threshold);
      put(n.left);
      put(n.right);
      put(n.value);
      put(n.cover);
    }
    total += static_cast<int>(t.nodes.size());
  }
  j["offsets"] = offsets;
  j["nodes"] = total;
  f.meta = j.dump();
  f.blobs.push_back({"nodes", {total, kNodeCols}, std::move(table)});
  nn::save_blob_file(path, f);
}

RandomForest RandomForest::load(const std::filesystem::path& path) {
  const nn::BlobFile f = nn::load_blob_file(path, "forest");
  RandomForest rf;
  json j;
  try {
    j = json::parse(f.meta);
    rf.n_features_ = j.at("n_features").get<int>();
    const auto& p = j.at("params");
    rf.params_.n_trees = p.at("n_trees").get<int>();
    rf.params_.max_depth = p.at("max_depth").get<int>();
    rf.params_.min_leaf = p.at("min_leaf").get<int>();
    rf.params_.mtry_fraction = p.at("mtry_fraction").get<double>();
    rf.params_.bootstrap = p.at("bootstrap").get<bool>();
    rf.params_.seed = p.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const auto offsets = j.at("offsets").get<std::vector<int>>();
  const int total = j.at("nodes").get<int>();
  const nn::Blob& b = f.get("nodes");
  if (b.data.size() != static_cast<std::size_t>(total) * kNodeCols) throw ParseError(path.string() + ": node table size");
  auto get = [&](std::size_t i, int c) {
    const float* v = &b.data[i * kNodeCols + static_cast<std::size_t>(3 * c)];
    return (static_cast<double>(v[0]) + static_cast<double>(v[1])) + static_cast<double>(v[2]);
  };
  for (std::size_t t = 0; t < offsets.size(); ++t) {
    const int end = t + 1 < offsets.size() ? offsets[t + 1] : total;
    Tree tree;
    for (int i = offsets[t]; i < end; ++i) {
      TreeNode n;
      n.feature = static_cast<int>(std::lround(get(static_cast<std::size_t>(i), 0)));
      n.threshold = get(static_cast<std::size_t>(i), 1);
      n.left = static_cast<int>(std::lround(get(static_cast<std::size_t>(i), 2)));
      n.right = static_cast<int>(std::lround(get(static_cast<std::size_t>(i), 3)));
      n.value = get(static_cast<std::size_t>(i), 4);
      n.cover = get(static_cast<std::size_t>(i), 5);
      tree.nodes.push_back(n);
    }
    rf.trees_.push_back(std::move(tree));
  }
  return rf;
}

ForestSelection fit_regressor(const Eigen::MatrixXd& x_train, const std::vector<double>& y_train,
                              const Eigen::MatrixXd& x_val, const std::vector<double>& y_val,
                              const ForestGrid& grid, std::uint64_t seed) {
  if (static_cast<std::size_t>(x_val.rows()) != y_val.size()) {
    throw InputError("random forest: validation features/labels length mismatch");
  }
  if (y_val.empty()) throw InputError("random forest: empty validation split");
  ForestSelection sel;
  bool first = true;
  for (int trees : grid.n_trees) {
    for (int depth : grid.max_depth) {
      for (int leaf : grid.min_leaf) {
        ForestParams p;
        p.n_trees = trees;
        p.max_depth = depth;
        p.min_leaf = leaf;
        p.seed = derive_seed(seed, "forest");
        RandomForest rf;
        rf.fit(x_train, y_train, p);
        const eval::Score s = eval::score(y_val, rf.predict(x_val));
        sel.tried.emplace_back(p, s.r2);
        spdlog::debug("forest {} val_r2={:.4f}", p.to_string(), s.r2);
        if (first || s.r2 > sel.val_r2) {
          first = false;
          sel.val_r2 = s.r2;
          sel.val_mae = s.mae;
          sel.params = p;
          sel.model = std::move(rf);
        }
      }
    }
  }
  return sel;
}

}  // namespace nbhd::bovw
