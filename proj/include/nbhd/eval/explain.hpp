#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nbhd/bovw/forest.hpp"
#include "nbhd/geo/boundaries.hpp"
#include "nbhd/geo/raster.hpp"

namespace nbhd::eval {

struct Attribution {
  std::string subject;          // patch id or geoid
  std::vector<double> values;   // one per feature / region
  double baseline = 0.0;        // expected output over the background
  double prediction = 0.0;
};

// Interventional Shapley values of a tree ensemble: for each background row z
// the game v(S) = f(x_S, z_rest) is solved exactly by walking the tree paths
// where x and z diverge, then averaged over the background. Completeness:
// sum(values) + baseline == prediction up to rounding.
Attribution tree_shap(const bovw::RandomForest& forest, const std::vector<double>& x,
                      const Eigen::MatrixXd& background);

// Brute-force subset enumeration of the same game (small feature counts only).
Attribution tree_shap_bruteforce(const bovw::RandomForest& forest, const std::vector<double>& x,
                                 const Eigen::MatrixXd& background);

struct SaliencyOptions {
  int grid = 4;             // grid x grid superpixels
  int permutations = 16;    // sampled orderings (each also run reversed)
  std::uint64_t seed = 0;
};

struct SaliencyMap {
  int grid = 0;
  std::vector<double> regions;  // row-major grid x grid, signed
  double baseline = 0.0;        // model output with every region masked
  double prediction = 0.0;      // unmasked output
  int evaluations = 0;
  // Per-pixel value: each region's attribution spread over its pixels.
  std::vector<double> pixel_map(int width, int height) const;
};

using ImageModel = std::function<double(const geo::Raster&)>;

// Permutation-sampled Shapley values over square superpixels. Masked regions
// are set to zero. Each sampled ordering telescopes from the fully masked to
// the unmasked image, so region sums equal prediction - baseline.
SaliencyMap cnn_saliency(const ImageModel& model, const geo::Raster& image, const SaliencyOptions& options);

// Red for positive, blue for negative, blended over the image.
geo::Raster saliency_overlay(const geo::Raster& image, const SaliencyMap& map);

struct ResizeErrorRow {
  std::string geoid;
  int width_dev = 0;   // original width - target width
  int height_dev = 0;
  double abs_error = 0.0;
};

struct ResizeErrorBin {
  double width_lo = 0.0, width_hi = 0.0;
  double height_lo = 0.0, height_hi = 0.0;
  int count = 0;
  double mean_abs_error = 0.0;
};

struct ResizeErrorAnalysis {
  std::vector<ResizeErrorRow> rows;
  std::vector<ResizeErrorBin> bins;  // non-empty bins only
  // Least squares fit of log(abs_error + eps) = intercept + slope * s with s
  // the mean of width and height deviation; slope < 0 means decay.
  double slope = 0.0;
  double intercept = 0.0;
  double eps = 1.0;
};

struct ResizeObservation {
  std::string geoid;
  int orig_width = 0;   // <= 0 means unknown (InputError)
  int orig_height = 0;
  double truth = 0.0;
  double prediction = 0.0;
};

ResizeErrorAnalysis resize_error_analysis(const std::vector<ResizeObservation>& obs, int target_width,
                                          int target_height, int bins = 6);
// Writes <dir>/resize_error.tsv, resize_error_bins.tsv, resize_error.json and
// resize_error.svg.
void write_resize_error(const std::filesystem::path& dir, const ResizeErrorAnalysis& a);

struct ClusterSheet {
  int cluster = 0;
  std::vector<std::size_t> members;  // indices shown, in sheet order
  std::size_t cluster_size = 0;
  double frequency = 0.0;            // cluster_size / total patches
  bool empty = false;
};

using PatchLoader = std::function<geo::Raster(std::size_t index)>;

// Renders up to n seeded-random members of `cluster` in a square grid with a
// caption; an empty cluster renders a notice instead.
ClusterSheet cluster_sheet(const std::vector<int>& assignments, const PatchLoader& load, int cluster, int n,
                           std::uint64_t seed, const std::filesystem::path& png);

struct ChoroplethResult {
  std::vector<double> edges;   // bin edges, ascending; bins = edges.size() - 1 (or 1 if constant)
  int bins = 0;
  std::vector<std::string> missing_geometry;
  int drawn = 0;
};

// Quantile-binned SVG choropleth. Geoids without a polygon are listed in
// <svg>.missing.tsv.
ChoroplethResult choropleth(const std::map<std::string, double>& values,
                            const std::vector<geo::BoundaryRecord>& boundaries, const std::string& variable,
                            const std::filesystem::path& svg, int bins = 5);

// Text in a 5x7 bitmap font (upper case, digits and a little punctuation).
void draw_text(geo::Raster& img, int x, int y, const std::string& text, int scale,
               const std::array<std::uint8_t, 3>& rgb);

}  // namespace nbhd::eval
