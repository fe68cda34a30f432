#include "nbhd/bovw/cluster.hpp"

#include <spdlog/spdlog.h>

#include <json.hpp>

#include <cmath>
#include <limits>
#include <map>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"

namespace nbhd::bovw {

using json = nlohmann::json;

// ------------------------------------------------------------------ k-means

std::vector<int> assign_nearest(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centroids,
                                std::vector<double>* sq_dist) {
  if (centroids.rows() == 0 || centroids.cols() != x.cols()) {
    throw InputError("centroid dimension does not match the data");
  }
  const Eigen::Index n = x.rows();
  const Eigen::Index k = centroids.rows();
  std::vector<int> a(static_cast<std::size_t>(n));
  if (sq_dist) sq_dist->assign(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double d = (x.row(i) - centroids.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(j);
      }
    }
    a[static_cast<std::size_t>(i)] = arg;
    if (sq_dist) (*sq_dist)[static_cast<std::size_t>(i)] = best;
  }
  return a;
}

namespace {

Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd c(k, x.cols());
  // Picking by cumulative weight (not by index arithmetic) makes the draw
  // depend only on the weight profile, so duplicated data picks the same points.
  auto pick = [&](const std::vector<double>& w) {
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0)) return static_cast<Eigen::Index>(std::min<double>(static_cast<double>(n - 1), std::floor(rng.uniform() * static_cast<double>(n))));
    const double target = rng.uniform() * total;
    double cum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      cum += w[static_cast<std::size_t>(i)];
      if (cum > target) return i;
    }
    return n - 1;
  };
  std::vector<double> d2(static_cast<std::size_t>(n), 1.0);
  c.row(0) = x.row(pick(d2));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (x.row(i) - c.row(0)).squaredNorm();
  for (int j = 1; j < k; ++j) {
    c.row(j) = x.row(pick(d2));
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (x.row(i) - c.row(j)).squaredNorm());
    }
  }
  return c;
}

KMeansResult lloyd(const Eigen::MatrixXd& x, Eigen::MatrixXd c, int max_iter) {
  KMeansResult r;
  const Eigen::Index n = x.rows();
  const Eigen::Index k = c.rows();
  std::vector<int> prev;
  std::vector<double> d2;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<int> a = assign_nearest(x, c, &d2);
    double wcss = 0.0;
    for (double v : d2) wcss += v;
    r.wcss_history.push_back(wcss);
    r.iterations = it + 1;
    if (a == prev) break;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(a[static_cast<std::size_t>(i)]) += x.row(i);
      ++count[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])];
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      if (count[static_cast<std::size_t>(j)] > 0) continue;
      // Empty cluster: move it onto the point farthest from its centroid,
      // taken from a cluster that keeps at least one member.
      Eigen::Index far = -1;
      double best = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (count[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])] > 1 && d2[static_cast<std::size_t>(i)] > best) {
          best = d2[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      if (far < 0) continue;
      const int from = a[static_cast<std::size_t>(far)];
      sum.row(from) -= x.row(far);
      --count[static_cast<std::size_t>(from)];
      sum.row(j) = x.row(far);
      count[static_cast<std::size_t>(j)] = 1;
      a[static_cast<std::size_t>(far)] = static_cast<int>(j);
      d2[static_cast<std::size_t>(far)] = 0.0;
      ++r.reseeded;
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      if (count[static_cast<std::size_t>(j)] > 0) c.row(j) = sum.row(j) / count[static_cast<std::size_t>(j)];
    }
    prev = std::move(a);
  }
  r.assignments = assign_nearest(x, c, &d2);
  r.wcss = 0.0;
  for (double v : d2) r.wcss += v;
  r.centroids = std::move(c);
  return r;
}

}  // namespace

KMeansResult kmeans_cluster(const Eigen::MatrixXd& x, int k, std::uint64_t seed, const KMeansOptions& options) {
  if (k < 1) throw InputError("k must be >= 1");
  if (k > x.rows()) {
    throw InputError("k-means with k=" + std::to_string(k) + " needs at least k points, got " +
                     std::to_string(x.rows()));
  }
  if (!x.allFinite()) throw InputError("k-means input contains non-finite values");
  KMeansResult best;
  for (int r = 0; r < std::max(1, options.n_init); ++r) {
    Rng rng(r == 0 ? seed : derive_seed(seed, "init:" + std::to_string(r)));
    KMeansResult res = lloyd(x, kmeanspp_init(x, k, rng), options.max_iter);
    if (r == 0 || res.wcss < best.wcss) best = std::move(res);
  }
  return best;
}

Eigen::MatrixXd to_matrix(const nn::Tensor& t) {
  if (t.shape.size() != 2) throw InputError("expected a 2-d tensor");
  Eigen::MatrixXd m(t.shape[0], t.shape[1]);
  for (int i = 0; i < t.shape[0]; ++i) {
    for (int j = 0; j < t.shape[1]; ++j) m(i, j) = t.data[static_cast<std::size_t>(i) * t.shape[1] + j];
  }
  return m;
}

nn::Tensor to_tensor(const Eigen::MatrixXd& m) {
  nn::Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      t.data[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
    }
  }
  return t;
}

// ------------------------------------------------------------ cluster model

std::string to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::none: return "none";
    case ClusterMethod::kmeans: return "kmeans";
    case ClusterMethod::dec: return "dec";
  }
  return "?";
}

ClusterMethod parse_cluster_method(const std::string& s) {
  if (s == "kmeans") return ClusterMethod::kmeans;
  if (s == "dec") return ClusterMethod::dec;
  if (s == "none") return ClusterMethod::none;
  throw ConfigError("clustering method must be kmeans or dec (got '" + s + "')");
}

ClusterModel::ClusterModel(int input_dim, int d_z, std::vector<int> hidden, std::uint64_t seed_)
    : seed(seed_), input_dim_(input_dim), d_z_(d_z), hidden_(std::move(hidden)) {
  if (d_z < 1 || input_dim < 1) throw ConfigError("autoencoder dimensions must be positive");
  if (hidden_.size() != 3) throw ConfigError("autoencoder needs three hidden widths (four layers per side)");
  Rng rng(derive_seed(seed, "autoencoder"));
  std::vector<int> enc = {input_dim_, hidden_[0], hidden_[1], hidden_[2], d_z_};
  for (std::size_t i = 0; i + 1 < enc.size(); ++i) {
    auto fc = std::make_unique<nn::Linear>(enc[i], enc[i + 1], "encoder.fc" + std::to_string(i + 1));
    fc->init(rng);
    encoder_.add(std::move(fc));
    if (i + 2 < enc.size()) encoder_.add(std::make_unique<nn::ReLU>());
  }
  for (std::size_t i = enc.size() - 1; i > 0; --i) {
    auto fc = std::make_unique<nn::Linear>(enc[i], enc[i - 1], "decoder.fc" + std::to_string(enc.size() - i));
    fc->init(rng);
    decoder_.add(std::move(fc));
    if (i > 1) decoder_.add(std::make_unique<nn::ReLU>());
  }
  decoder_.at(0).input_grad = true;
}

nn::Tensor ClusterModel::encode_standardized(const nn::Tensor& z_in) { return encoder_.forward(z_in, false); }

nn::Tensor ClusterModel::encode(const nn::Tensor& raw) {
  if (standardizer.mean.empty()) throw InternalError("cluster model has no fitted standardizer");
  return encode_standardized(standardizer.apply(raw));
}

nn::Tensor ClusterModel::decode(const nn::Tensor& latent) { return decoder_.forward(latent, false); }

std::vector<int> ClusterModel::assign(const nn::Tensor& raw) {
  if (centroids.rows() == 0) throw InternalError("cluster model has no centroids");
  return assign_nearest(to_matrix(encode(raw)), centroids);
}

nn::BlobFile ClusterModel::to_blobs() {
  nn::BlobFile f;
  f.kind = "cluster_model";
  f.meta = json{{"input_dim", input_dim_}, {"d_z", d_z_}, {"hidden", hidden_},
                {"method", bovw::to_string(method)}, {"seed", seed}, {"k", k()}}
               .dump();
  for (auto* p : encoder_.params()) f.blobs.push_back(nn::to_blob(*p));
  for (auto* p : decoder_.params()) f.blobs.push_back(nn::to_blob(*p));
  f.blobs.push_back({"standardizer.mean", {static_cast<int>(standardizer.mean.size())}, standardizer.mean});
  f.blobs.push_back({"standardizer.scale", {static_cast<int>(standardizer.scale.size())}, standardizer.scale});
  if (centroids.rows() > 0) {
    const nn::Tensor c = to_tensor(centroids);
    f.blobs.push_back({"centroids", c.shape, c.data});
  }
  return f;
}

std::unique_ptr<ClusterModel> ClusterModel::from_blobs(const nn::BlobFile& f) {
  json meta;
  try {
    meta = json::parse(f.meta);
  } catch (const json::exception& e) {
    throw ParseError(std::string("cluster model metadata: ") + e.what());
  }
  auto m = std::make_unique<ClusterModel>(meta.at("input_dim").get<int>(), meta.at("d_z").get<int>(),
                                          meta.at("hidden").get<std::vector<int>>(),
                                          meta.at("seed").get<std::uint64_t>());
  m->method = parse_cluster_method(meta.at("method").get<std::string>());
  for (auto* p : m->encoder_.params()) nn::from_blob(f.get(p->name), *p);
  for (auto* p : m->decoder_.params()) nn::from_blob(f.get(p->name), *p);
  m->standardizer.mean = f.get("standardizer.mean").data;
  m->standardizer.scale = f.get("standardizer.scale").data;
  if (f.has("centroids")) {
    const nn::Blob& b = f.get("centroids");
    nn::Tensor t;
    t.shape = b.shape;
    t.data = b.data;
    m->centroids = to_matrix(t);
  }
  return m;
}

std::unique_ptr<ClusterModel> ClusterModel::clone() {
  auto c = from_blobs(to_blobs());
  // Centroids round-trip through float storage; keep the exact values.
  c->centroids = centroids;
  return c;
}

void ClusterModel::save(const std::filesystem::path& path) { nn::save_blob_file(path, to_blobs()); }

std::unique_ptr<ClusterModel> ClusterModel::load(const std::filesystem::path& path) {
  return from_blobs(nn::load_blob_file(path, "cluster_model"));
}

namespace {

nn::Tensor gather_rows(const nn::Tensor& x, const std::vector<std::size_t>& order, std::size_t begin,
                       std::size_t end) {
  const int d = x.shape[1];
  nn::Tensor b({static_cast<int>(end - begin), d});
  for (std::size_t i = begin; i < end; ++i) {
    std::copy(x.row(static_cast<int>(order[i])), x.row(static_cast<int>(order[i])) + d,
              b.row(static_cast<int>(i - begin)));
  }
  return b;
}

double recon_loss(ClusterModel& m, const nn::Tensor& z_in) {
  if (z_in.rows() == 0) return 0.0;
  double acc = 0.0;
  const int bs = 256;
  for (int b = 0; b < z_in.rows(); b += bs) {
    const int e = std::min(z_in.rows(), b + bs);
    std::vector<std::size_t> idx;
    for (int i = b; i < e; ++i) idx.push_back(static_cast<std::size_t>(i));
    const nn::Tensor x = gather_rows(z_in, idx, 0, idx.size());
    const nn::Tensor r = m.decode(m.encode_standardized(x));
    acc += nn::mse_loss(r, x, nullptr) * (e - b);
  }
  return acc / z_in.rows();
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

}  // namespace

std::unique_ptr<ClusterModel> train_autoencoder(const nn::Tensor& train, const nn::Tensor& val, int d_z,
                                                const AutoencoderOptions& options, AutoencoderReport* report) {
  if (train.shape.size() != 2 || train.rows() == 0) throw ConfigError("autoencoder training set is empty");
  auto model = std::make_unique<ClusterModel>(train.shape[1], d_z, options.hidden, options.seed);
  model->standardizer = Standardizer::fit(train);
  const nn::Tensor zt = model->standardizer.apply(train);
  const nn::Tensor zv = val.rows() > 0 ? model->standardizer.apply(val) : nn::Tensor();
  std::vector<nn::Param*> params = model->encoder().params();
  for (auto* p : model->decoder().params()) params.push_back(p);
  nn::AdamW opt(params, {options.lr, options.weight_decay});

  AutoencoderReport rep;
  double best = std::numeric_limits<double>::infinity();
  std::vector<nn::FloatVec> best_w;
  int since = 0;
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    const auto order = shuffled(static_cast<std::size_t>(zt.rows()), derive_seed(options.seed, "ae_epoch:" + std::to_string(epoch)));
    double acc = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t e = std::min(order.size(), b + options.batch_size);
      const nn::Tensor x = gather_rows(zt, order, b, e);
      opt.zero_grad();
      const nn::Tensor z = model->encoder().forward(x, true);
      const nn::Tensor r = model->decoder().forward(z, true);
      nn::Tensor g;
      const double loss = nn::mse_loss(r, x, &g);
      if (!std::isfinite(loss)) {
        throw NumericalError("autoencoder loss diverged at epoch " + std::to_string(epoch) + " (d_z " +
                             std::to_string(d_z) + "); lower the learning rate");
      }
      model->encoder().backward(model->decoder().backward(g));
      opt.step();
      acc += loss * static_cast<double>(e - b);
    }
    rep.train_loss.push_back(acc / zt.rows());
    const double vl = zv.rows() > 0 ? recon_loss(*model, zv) : rep.train_loss.back();
    rep.val_loss.push_back(vl);
    spdlog::debug("autoencoder d_z={} epoch={} train={:.5g} val={:.5g}", d_z, epoch, rep.train_loss.back(), vl);
    if (vl < best) {
      best = vl;
      rep.best_epoch = epoch;
      best_w.clear();
      for (auto* p : params) best_w.push_back(p->value);
      since = 0;
    } else if (++since >= options.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_w[i];
  rep.best_val_loss = best;
  if (report) *report = rep;
  return model;
}

void fit_kmeans(ClusterModel& model, const nn::Tensor& train, int k, std::uint64_t seed,
                const KMeansOptions& options) {
  const Eigen::MatrixXd z = to_matrix(model.encode(train));
  model.centroids = kmeans_cluster(z, k, seed, options).centroids;
  model.method = ClusterMethod::kmeans;
}

DecReport train_dec(ClusterModel& model, const nn::Tensor& train, int k, const DecOptions& options) {
  if (train.rows() == 0) throw ConfigError("DEC training set is empty");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (options.collapse_epochs < 1) throw ConfigError("collapse_epochs must be >= 1");
  DecReport rep;
  const nn::Tensor zt = model.standardizer.apply(train);
  const int n = zt.rows();
  const int dz = model.d_z();

  // Initial centroids from k-means on the stage-1 latents.
  Eigen::MatrixXd lat = to_matrix(model.encode_standardized(zt));
  const int k0 = std::min(k, n);
  Eigen::MatrixXd init = kmeans_cluster(lat, k0, derive_seed(options.seed, "dec_init")).centroids;
  if (k > k0) {
    rep.warnings.push_back("k=" + std::to_string(k) + " exceeds the " + std::to_string(n) +
                           " training samples; extra centroids start as perturbed copies");
    Rng rng(derive_seed(options.seed, "dec_extra"));
    const double spread = std::sqrt((lat.rowwise() - lat.colwise().mean()).squaredNorm() / std::max(1, n * dz));
    Eigen::MatrixXd full(k, dz);
    full.topRows(k0) = init;
    for (int j = k0; j < k; ++j) {
      for (int d = 0; d < dz; ++d) full(j, d) = init(j % k0, d) + 1e-3 * spread * rng.normal();
    }
    init = full;
  }
  model.centroids = init;

  nn::Param cparam;
  cparam.name = "centroids";
  cparam.shape = {k, dz};
  cparam.value.resize(static_cast<std::size_t>(k) * dz);
  for (int j = 0; j < k; ++j) {
    for (int d = 0; d < dz; ++d) cparam.value[static_cast<std::size_t>(j) * dz + d] = static_cast<float>(init(j, d));
  }
  cparam.grad.assign(cparam.value.size(), 0.0f);
  cparam.m.assign(cparam.value.size(), 0.0f);
  cparam.v.assign(cparam.value.size(), 0.0f);
  auto sync_centroids = [&] {
    for (int j = 0; j < k; ++j) {
      for (int d = 0; d < dz; ++d) model.centroids(j, d) = cparam.value[static_cast<std::size_t>(j) * dz + d];
    }
  };
  sync_centroids();

  auto mean_distance = [&](std::vector<int>* assign_out, std::vector<int>* counts) {
    const Eigen::MatrixXd z = to_matrix(model.encode_standardized(zt));
    std::vector<double> d2;
    std::vector<int> a = assign_nearest(z, model.centroids, &d2);
    double s = 0.0;
    for (double v : d2) s += v;
    if (counts) {
      counts->assign(static_cast<std::size_t>(k), 0);
      for (int c : a) ++(*counts)[static_cast<std::size_t>(c)];
    }
    if (assign_out) *assign_out = std::move(a);
    return s / n;
  };
  rep.distance_init = mean_distance(nullptr, nullptr);

  std::vector<nn::Param*> params = model.encoder().params();
  if (options.train_decoder) {
    for (auto* p : model.decoder().params()) params.push_back(p);
  }
  params.push_back(&cparam);
  nn::AdamW opt(params, {options.lr, 0.0});
  // Without decoder training its gradients are still accumulated; clear them.
  auto dec_params = model.decoder().params();

  int empty_run = 0;
  int since = 0;
  double best = std::numeric_limits<double>::infinity();
  const float lam = static_cast<float>(options.lambda);
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    std::vector<int> assign;
    std::vector<int> counts;
    mean_distance(&assign, &counts);
    const int empty = static_cast<int>(std::count(counts.begin(), counts.end(), 0));
    empty_run = empty > 0 ? empty_run + 1 : 0;
    if (empty_run >= options.collapse_epochs) {
      rep.collapsed = true;
      rep.warnings.push_back("cluster collapse: " + std::to_string(empty) + " of " + std::to_string(k) +
                             " clusters empty for " + std::to_string(empty_run) +
                             " consecutive epochs; stopping DEC early");
      spdlog::warn("{}", rep.warnings.back());
      break;
    }
    const auto order = shuffled(static_cast<std::size_t>(n), derive_seed(options.seed, "dec_epoch:" + std::to_string(epoch)));
    double rsum = 0.0, dsum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t e = std::min(order.size(), b + options.batch_size);
      const int m = static_cast<int>(e - b);
      const nn::Tensor x = gather_rows(zt, order, b, e);
      opt.zero_grad();
      for (auto* p : dec_params) p->zero_grad();
      const nn::Tensor z = model.encoder().forward(x, true);
      const nn::Tensor r = model.decoder().forward(z, true);
      nn::Tensor g;
      const double rl = nn::mse_loss(r, x, &g);
      nn::Tensor dz_total = model.decoder().backward(g);
      double dl = 0.0;
      for (int i = 0; i < m; ++i) {
        const int c = assign[order[b + static_cast<std::size_t>(i)]];
        for (int d = 0; d < dz; ++d) {
          const std::size_t zi = static_cast<std::size_t>(i) * dz + d;
          const std::size_t ci = static_cast<std::size_t>(c) * dz + d;
          const float diff = z.data[zi] - cparam.value[ci];
          dl += static_cast<double>(diff) * diff;
          dz_total.data[zi] += 2.0f * lam * diff / m;
          cparam.grad[ci] -= 2.0f * lam * diff / m;
        }
      }
      dl /= m;
      if (!std::isfinite(rl) || !std::isfinite(dl)) {
        throw NumericalError("DEC loss diverged at epoch " + std::to_string(epoch));
      }
      model.encoder().backward(dz_total);
      opt.step();
      rsum += rl * m;
      dsum += dl * m;
    }
    sync_centroids();
    const double recon = rsum / n;
    const double dist = dsum / n;
    const double loss = recon + options.lambda * dist;
    rep.recon.push_back(recon);
    rep.distance.push_back(dist);
    rep.loss.push_back(loss);
    rep.epochs = epoch;
    if (loss < best * (1.0 - options.plateau_tol)) {
      best = loss;
      since = 0;
    } else if (++since >= options.patience) {
      break;
    }
  }
  rep.distance_final = mean_distance(nullptr, nullptr);
  model.method = ClusterMethod::dec;
  return rep;
}

// ----------------------------------------------------------- hood features

std::string to_string(FeatureMode m) { return m == FeatureMode::frequency ? "frequency" : "distance"; }

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "frequency") return FeatureMode::frequency;
  if (s == "distance") return FeatureMode::distance;
  throw ConfigError("feature mode must be frequency or distance (got '" + s + "')");
}

HoodFeatures hood_features(const Eigen::MatrixXd& latents, const std::vector<int>& assignments,
                           const Eigen::MatrixXd& centroids, const std::vector<std::string>& patch_geoids,
                           FeatureMode mode, const std::vector<std::string>& expected, bool min_aggregation) {
  const Eigen::Index k = centroids.rows();
  if (assignments.size() != patch_geoids.size()) throw InputError("assignment/geoid count mismatch");
  if (mode == FeatureMode::distance && latents.rows() != static_cast<Eigen::Index>(patch_geoids.size())) {
    throw InputError("latent/geoid count mismatch");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < patch_geoids.size(); ++i) {
    const int a = assignments[i];
    if (a < 0 || a >= k) throw InputError("cluster id " + std::to_string(a) + " outside [0, k)");
    groups[patch_geoids[i]].push_back(i);
  }
  HoodFeatures out;
  for (const auto& g : expected) {
    if (!groups.count(g)) out.excluded.emplace_back(g, "no_patches");
  }
  out.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()), k);
  Eigen::Index row = 0;
  for (const auto& [geoid, idx] : groups) {
    out.geoids.push_back(geoid);
    if (mode == FeatureMode::frequency) {
      for (auto i : idx) out.x(row, assignments[i]) += 1.0;
      out.x.row(row) /= static_cast<double>(idx.size());
    } else {
      for (Eigen::Index j = 0; j < k; ++j) {
        double agg = min_aggregation ? std::numeric_limits<double>::infinity() : 0.0;
        for (auto i : idx) {
          const double d = (latents.row(static_cast<Eigen::Index>(i)) - centroids.row(j)).norm();
          agg = min_aggregation ? std::min(agg, d) : agg + d;
        }
        out.x(row, j) = min_aggregation ? agg : agg / static_cast<double>(idx.size());
      }
    }
    ++row;
  }
  return out;
}

}  // namespace nbhd::bovw
