#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nbhd/geo/boundaries.hpp"
#include "nbhd/geo/crop.hpp"
#include "nbhd/geo/raster.hpp"

namespace nbhd {
class Rng;
}

namespace nbhd::crop {

inline constexpr int kPatchSize = 512;
inline constexpr int kGridCell = 112;
inline constexpr int kMedianWidth = 1353;
inline constexpr int kMedianHeight = 1350;

struct Patch {
  std::string geoid;
  geo::Raster pixels;
  int grid_row = 0;
  int grid_col = 0;
  double nonzero_fraction = 0.0;
};

// ceil(W/size) * ceil(H/size)
std::size_t patch_candidate_count(int width, int height, int size);

// Zero-pads the crop on the right/bottom to a multiple of `size` and keeps the
// patches whose fraction of nonzero pixels (any band != 0) is strictly above
// keep_threshold. Grid coordinates are relative to the crop origin.
std::vector<Patch> patchify(const geo::Raster& crop, const std::string& geoid,
                            int size = kPatchSize, double keep_threshold = 0.5);

// Bilinear resampling with pixel-centre alignment: output pixel x samples the
// source at (x + 0.5) * W / w - 0.5, clamped to the source edge.
geo::Raster resize_bilinear(const geo::Raster& src, int out_width, int out_height);

struct ResizedImage {
  std::string geoid;
  geo::Raster pixels;
  int orig_width = 0;
  int orig_height = 0;
};

ResizedImage resize_to_median(const geo::Raster& crop, const std::string& geoid,
                              int width = kMedianWidth, int height = kMedianHeight);

// Weighted sampling of m indices without replacement, probability proportional
// to weight at each successive draw (exponential-key method). Returned in draw
// order. Weights must be positive; m >= n returns every index.
std::vector<std::size_t> weighted_sample_without_replacement(const std::vector<double>& weights,
                                                             std::size_t m, Rng& rng);

// A 112x112 cell of the global grid anchored at the top-left of the tile
// mosaic, paired with one neighborhood it intersects.
struct GridCell {
  std::string geoid;
  int grid_row = 0;
  int grid_col = 0;
  // Pixel centres of the cell inside the polygon, over cell*cell.
  double overlap_fraction = 0.0;
};

struct GridOptions {
  int cell = kGridCell;
  int max_per_hood = 50;
};

// Candidate cells for every neighborhood (all cells with overlap > 0, sorted
// by grid position). Boundaries must be in the tiles' CRS.
std::vector<GridCell> grid_candidates(const geo::TileIndex& tiles,
                                      const std::vector<geo::BoundaryRecord>& boundaries,
                                      const GridOptions& options);

// Applies the per-neighborhood cap: neighborhoods with more than max_per_hood
// candidates keep a weighted sample (weights = overlap_fraction) drawn with a
// seed derived from (seed, geoid). Output sorted by (geoid, row, col).
std::vector<GridCell> grid_sample(const geo::TileIndex& tiles,
                                  const std::vector<geo::BoundaryRecord>& boundaries,
                                  const GridOptions& options, std::uint64_t seed);
std::vector<GridCell> cap_candidates(std::vector<GridCell> candidates, int max_per_hood,
                                     std::uint64_t seed);

// Geo-transform of the grid: origin at the mosaic's top-left corner.
geo::GeoTransform grid_transform(const geo::TileIndex& tiles);

// Mosaicked pixels of an arbitrary window (zero where no tile covers it).
geo::Raster read_window(const geo::TileIndex& tiles, const geo::GeoTransform& window,
                        int width, int height, int channels);

geo::Raster read_grid_cell(const geo::TileIndex& tiles, const GridCell& cell, int size,
                           int channels);

}  // namespace nbhd::crop
