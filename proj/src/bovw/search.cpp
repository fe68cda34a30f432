#include "nbhd/bovw/search.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"

namespace nbhd::bovw {

std::vector<std::string> patch_splits(const FeatureStore& store,
                                      const std::map<std::string, dataset::DatasetItem>& hoods) {
  std::vector<std::string> out;
  out.reserve(store.size());
  for (const auto& g : store.geoids) {
    auto it = hoods.find(g);
    out.push_back(it == hoods.end() ? std::string() : it->second.split);
  }
  return out;
}

namespace {

struct Design {
  Eigen::MatrixXd x;
  std::vector<double> y;
  std::vector<std::string> geoids;
};

// Rows of `f` whose hood is labelled, in `split` (empty: any split).
Design design(const HoodFeatures& f, const std::map<std::string, dataset::DatasetItem>& hoods,
              supervised::Target target, const std::string& split) {
  std::vector<Eigen::Index> rows;
  Design d;
  for (std::size_t i = 0; i < f.geoids.size(); ++i) {
    auto it = hoods.find(f.geoids[i]);
    if (it == hoods.end()) continue;
    if (!split.empty() && it->second.split != split) continue;
    const double y = supervised::label_of(it->second, target);
    if (!std::isfinite(y)) continue;
    rows.push_back(static_cast<Eigen::Index>(i));
    d.y.push_back(y);
    d.geoids.push_back(f.geoids[i]);
  }
  d.x.resize(static_cast<Eigen::Index>(rows.size()), f.x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) d.x.row(static_cast<Eigen::Index>(i)) = f.x.row(rows[i]);
  return d;
}

nn::Tensor subset(const nn::Tensor& x, const std::vector<std::string>& split, const std::string& which) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == which) idx.push_back(i);
  }
  const int d = x.shape.at(1);
  nn::Tensor out({static_cast<int>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(x.row(static_cast<int>(idx[i])), x.row(static_cast<int>(idx[i])) + d, out.row(static_cast<int>(i)));
  }
  return out;
}

}  // namespace

SearchResult hyperparameter_search(const SearchData& data, const SearchOptions& options) {
  if (data.patch_split.size() != data.patches.size()) throw InputError("patch split column does not match the store");
  const nn::Tensor train = subset(data.patches.x, data.patch_split, "train");
  const nn::Tensor val = subset(data.patches.x, data.patch_split, "val");
  if (train.rows() == 0) throw InputError("no training patches for the semi-supervised search");
  std::vector<std::string> expected;
  for (const auto& [g, item] : data.hoods) expected.push_back(g);

  SearchResult result;
  // (target, method) -> index into result.winners
  std::map<std::pair<int, int>, std::size_t> win_index;

  for (ClusterMethod method : options.methods) {
    std::vector<int> ks = options.k;
    if (method == ClusterMethod::dec) ks.insert(ks.end(), options.dec_extra_k.begin(), options.dec_extra_k.end());
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    for (int d_z : options.d_z) {
      AutoencoderOptions ae = options.autoencoder;
      ae.seed = derive_seed(options.seed, "autoencoder:" + std::to_string(d_z));
      AutoencoderReport ae_rep;
      auto stage1 = train_autoencoder(train, val, d_z, ae, &ae_rep);
      spdlog::info("autoencoder d_z={} best_epoch={} val_mse={:.4f}", d_z, ae_rep.best_epoch, ae_rep.best_val_loss);
      for (int k : ks) {
        std::shared_ptr<ClusterModel> model = stage1->clone();
        std::string note;
        const std::string tag = to_string(method) + ":" + std::to_string(d_z) + ":" + std::to_string(k);
        if (k > train.rows() && method == ClusterMethod::kmeans) {
          note = "skipped: k exceeds the " + std::to_string(train.rows()) + " training patches";
        } else if (method == ClusterMethod::kmeans) {
          fit_kmeans(*model, train, k, derive_seed(options.seed, "kmeans:" + tag), options.kmeans);
        } else {
          DecOptions dec = options.dec;
          dec.seed = derive_seed(options.seed, "dec:" + tag);
          const DecReport rep = train_dec(*model, train, k, dec);
          if (rep.collapsed) note = "collapse";
        }
        if (note.rfind("skipped", 0) == 0) {
          for (auto target : options.targets) {
            for (auto mode : options.modes) {
              LeaderboardRow row{supervised::to_string(target), to_string(method), d_z, k, to_string(mode), "", 0.0, 0.0, 0, 0, note};
              result.leaderboard.push_back(row);
            }
          }
          spdlog::warn("{} {}", tag, note);
          continue;
        }
        const Eigen::MatrixXd latents = to_matrix(model->encode(data.patches.x));
        const std::vector<int> assign = assign_nearest(latents, model->centroids);
        for (FeatureMode mode : options.modes) {
          HoodFeatures hf = hood_features(latents, assign, model->centroids, data.patches.geoids, mode, expected,
                                          options.min_aggregation);
          for (auto target : options.targets) {
            const Design tr = design(hf, data.hoods, target, "train");
            const Design va = design(hf, data.hoods, target, "val");
            LeaderboardRow row{supervised::to_string(target), to_string(method), d_z, k, to_string(mode), "", 0.0, 0.0,
                               static_cast<int>(tr.y.size()), static_cast<int>(va.y.size()), note};
            if (tr.y.empty() || va.y.empty()) {
              row.note = "skipped: no labelled train or validation neighborhoods";
              result.leaderboard.push_back(row);
              continue;
            }
            ForestSelection sel = fit_regressor(tr.x, tr.y, va.x, va.y, options.forest,
                                                derive_seed(options.seed, "forest:" + tag + ":" + row.mode + ":" + row.target));
            row.forest = sel.params.to_string();
            row.val_r2 = sel.val_r2;
            row.val_mae = sel.val_mae;
            result.leaderboard.push_back(row);
            spdlog::info("search {} {} mode={} val_r2={:.4f}", row.target, tag, row.mode, row.val_r2);

            const auto key = std::make_pair(static_cast<int>(target), static_cast<int>(method));
            auto it = win_index.find(key);
            bool better = it == win_index.end();
            if (!better) {
              const LeaderboardRow& cur = result.winners[it->second].row;
              better = row.val_r2 > cur.val_r2 || (row.val_r2 == cur.val_r2 && row.k < cur.k);
            }
            if (!better) continue;
            Winner w;
            w.target = target;
            w.method = method;
            w.row = row;
            w.cluster = model;
            w.mode = mode;
            w.forest = std::move(sel.model);
            w.features = hf;
            const Design all = design(hf, data.hoods, target, "");
            const std::vector<double> pred = w.forest.predict(all.x);
            for (std::size_t i = 0; i < all.geoids.size(); ++i) {
              w.results.push_back({all.geoids[i], data.hoods.at(all.geoids[i]).split, all.y[i], pred[i]});
            }
            if (it == win_index.end()) {
              win_index[key] = result.winners.size();
              result.winners.push_back(std::move(w));
            } else {
              result.winners[it->second] = std::move(w);
            }
          }
        }
      }
    }
  }
  return result;
}

void write_leaderboard(const std::filesystem::path& path, const std::vector<LeaderboardRow>& rows) {
  Table t({"target", "method", "d_z", "k", "mode", "forest", "val_r2", "val_mae", "train_hoods", "val_hoods", "note"});
  for (const auto& r : rows) {
    t.add_row({r.target, r.method, std::to_string(r.d_z), std::to_string(r.k), r.mode, r.forest, format_double(r.val_r2),
               format_double(r.val_mae), std::to_string(r.train_hoods), std::to_string(r.val_hoods), r.note});
  }
  t.write(path);
}

std::vector<LeaderboardRow> read_leaderboard(const std::filesystem::path& path) {
  const Table t = Table::read(path);
  std::vector<LeaderboardRow> rows;
  for (std::size_t i = 0; i < t.size(); ++i) {
    LeaderboardRow r;
    r.target = t.at(i, "target");
    r.method = t.at(i, "method");
    r.d_z = static_cast<int>(parse_int(t.at(i, "d_z"), "d_z"));
    r.k = static_cast<int>(parse_int(t.at(i, "k"), "k"));
    r.mode = t.at(i, "mode");
    r.forest = t.at(i, "forest");
    r.val_r2 = t.number(i, "val_r2");
    r.val_mae = t.number(i, "val_mae");
    r.train_hoods = static_cast<int>(parse_int(t.at(i, "train_hoods"), "train_hoods"));
    r.val_hoods = static_cast<int>(parse_int(t.at(i, "val_hoods"), "val_hoods"));
    r.note = t.at(i, "note");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace nbhd::bovw
