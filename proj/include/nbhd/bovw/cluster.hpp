#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "nbhd/bovw/features.hpp"
#include "nbhd/nn/io.hpp"
#include "nbhd/nn/layers.hpp"

namespace nbhd::bovw {

// ------------------------------------------------------------------ k-means

struct KMeansOptions {
  int max_iter = 100;
  int n_init = 1;  // restarts; the lowest within-cluster sum of squares wins
};

struct KMeansResult {
  Eigen::MatrixXd centroids;  // k x d
  std::vector<int> assignments;
  // Within-cluster sum of squares after each assignment step.
  std::vector<double> wcss_history;
  double wcss = 0.0;
  int iterations = 0;
  int reseeded = 0;  // empty clusters moved to the farthest point
};

// Nearest centroid by Euclidean distance; ties go to the lower index.
std::vector<int> assign_nearest(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centroids,
                                std::vector<double>* sq_dist = nullptr);

// Lloyd's algorithm from a k-means++ start. Requires 1 <= k <= n.
KMeansResult kmeans_cluster(const Eigen::MatrixXd& x, int k, std::uint64_t seed,
                            const KMeansOptions& options = {});

Eigen::MatrixXd to_matrix(const nn::Tensor& t);
nn::Tensor to_tensor(const Eigen::MatrixXd& m);

// ------------------------------------------------------------ cluster model

enum class ClusterMethod { none, kmeans, dec };
std::string to_string(ClusterMethod m);
ClusterMethod parse_cluster_method(const std::string& s);

// Standardizer + feed-forward autoencoder (4 layers each side) + centroids in
// the latent space.
class ClusterModel {
 public:
  ClusterModel(int input_dim, int d_z, std::vector<int> hidden, std::uint64_t seed);

  int input_dim() const { return input_dim_; }
  int d_z() const { return d_z_; }
  int k() const { return static_cast<int>(centroids.rows()); }
  const std::vector<int>& hidden() const { return hidden_; }

  nn::Sequential& encoder() { return encoder_; }
  nn::Sequential& decoder() { return decoder_; }

  // Raw features -> standardized -> latent (N x d_z), eval mode.
  nn::Tensor encode(const nn::Tensor& raw);
  // Latent of already standardized rows.
  nn::Tensor encode_standardized(const nn::Tensor& z_in);
  nn::Tensor decode(const nn::Tensor& latent);

  std::vector<int> assign(const nn::Tensor& raw);

  std::unique_ptr<ClusterModel> clone();
  void save(const std::filesystem::path& path);
  static std::unique_ptr<ClusterModel> load(const std::filesystem::path& path);

  Standardizer standardizer;
  Eigen::MatrixXd centroids;  // k x d_z, empty before clustering
  ClusterMethod method = ClusterMethod::none;
  std::uint64_t seed;

 private:
  nn::BlobFile to_blobs();
  static std::unique_ptr<ClusterModel> from_blobs(const nn::BlobFile& f);

  int input_dim_;
  int d_z_;
  std::vector<int> hidden_;
  nn::Sequential encoder_;
  nn::Sequential decoder_;
};

struct AutoencoderOptions {
  std::vector<int> hidden = {1024, 512, 128};
  double lr = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 64;
  int max_epochs = 30;
  int patience = 3;
  std::uint64_t seed = 0;
};

struct AutoencoderReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

// Stage 1: fits the standardizer on `train` and minimises mean squared
// reconstruction error, keeping the weights of the best validation epoch.
std::unique_ptr<ClusterModel> train_autoencoder(const nn::Tensor& train, const nn::Tensor& val, int d_z,
                                                const AutoencoderOptions& options,
                                                AutoencoderReport* report = nullptr);

// Stage 1 followed by k-means on the latent codes of `train`.
void fit_kmeans(ClusterModel& model, const nn::Tensor& train, int k, std::uint64_t seed,
                const KMeansOptions& options = {});

struct DecOptions {
  double lambda = 0.1;
  double lr = 1e-3;
  int batch_size = 64;
  int max_epochs = 20;
  int patience = 3;          // epochs without relative improvement > plateau_tol
  double plateau_tol = 1e-4;
  int collapse_epochs = 3;   // consecutive epochs with an empty cluster
  bool train_decoder = true;
  std::uint64_t seed = 0;
};

struct DecReport {
  double distance_init = 0.0;   // mean squared latent distance to assigned centroid
  double distance_final = 0.0;
  std::vector<double> loss;     // per epoch: recon + lambda * distance
  std::vector<double> recon;
  std::vector<double> distance;
  int epochs = 0;
  bool collapsed = false;
  std::vector<std::string> warnings;
};

// Stage 2: initialises k centroids by k-means on the stage-1 latents (extra
// centroids are perturbed copies when k exceeds the sample count) and then
// optimises encoder, decoder and centroids jointly on
//   mse(x, decode(encode(x))) + lambda * mean ||z - c_assigned||^2,
// refreshing assignments every epoch.
DecReport train_dec(ClusterModel& model, const nn::Tensor& train, int k, const DecOptions& options);

// ----------------------------------------------------------- hood features

enum class FeatureMode { frequency, distance };
std::string to_string(FeatureMode m);
FeatureMode parse_feature_mode(const std::string& s);

struct HoodFeatures {
  std::vector<std::string> geoids;  // sorted
  Eigen::MatrixXd x;                // hoods x k
  std::vector<std::pair<std::string, std::string>> excluded;  // geoid, reason
};

// frequency: normalised histogram of the neighborhood's patch assignments.
// distance: per centroid, mean (or min) Euclidean distance from the
// neighborhood's patch latents. Neighborhoods listed in `expected` without any
// patch are excluded with reason "no_patches".
HoodFeatures hood_features(const Eigen::MatrixXd& latents, const std::vector<int>& assignments,
                           const Eigen::MatrixXd& centroids, const std::vector<std::string>& patch_geoids,
                           FeatureMode mode, const std::vector<std::string>& expected = {},
                           bool min_aggregation = false);

}  // namespace nbhd::bovw
