#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "nbhd/geo/boundaries.hpp"
#include "nbhd/geo/raster.hpp"

namespace nbhd::geo {

// A neighborhood's imagery: polygon bounding box at tile resolution with every
// pixel whose centre lies outside the polygon set to zero in all bands.
struct RasterCrop {
  std::string geoid;
  Raster pixels;
  GeoTransform transform;
  int epsg = 0;
  // Pixels inside the polygon and covered by imagery, over width*height.
  double nonzero_fraction = 0.0;
  std::size_t mask_pixels = 0;
  int dominant_year = 0;
  bool multi_year = false;

  double gsd() const { return transform.pixel_size; }
};

struct CoverageGap {
  std::string geoid;
  std::string reason;
};

struct CropOptions {
  bool keep_ir = false;  // retain a fourth band when tiles carry one
  std::size_t tile_cache = 8;
};

// Lazily loaded set of georeferenced tiles sharing one CRS and pixel size.
class TileIndex {
 public:
  explicit TileIndex(std::vector<std::filesystem::path> paths, std::size_t cache_capacity = 8);

  std::size_t size() const { return infos_.size(); }
  const GeoRasterInfo& info(std::size_t i) const { return infos_[i]; }
  const std::filesystem::path& path(std::size_t i) const { return paths_[i]; }
  BBox extent(std::size_t i) const;
  int epsg() const { return epsg_; }
  double gsd() const { return gsd_; }

  // Thread-safe; evicts least recently used tiles beyond the capacity.
  std::shared_ptr<const GeoRaster> load(std::size_t i) const;

 private:
  std::vector<std::filesystem::path> paths_;
  std::vector<GeoRasterInfo> infos_;
  int epsg_ = 0;
  double gsd_ = 0.0;
  std::size_t capacity_;
  mutable std::mutex mu_;
  mutable std::vector<std::pair<std::size_t, std::shared_ptr<const GeoRaster>>> cache_;
};

// Pixel-centre-in-polygon mask (1 inside) for a width x height grid.
std::vector<std::uint8_t> rasterize_mask(const Polygon& poly, const GeoTransform& transform,
                                         int width, int height);

// Crops one neighborhood. Returns nullopt (and fills `gap`) when no imagery
// covers the polygon. `polygon` must already be in the tiles' CRS.
std::optional<RasterCrop> crop_neighborhood(const std::string& geoid, const Polygon& polygon,
                                            const TileIndex& tiles, const CropOptions& options,
                                            CoverageGap* gap);

struct CropResult {
  std::vector<RasterCrop> crops;  // sorted by geoid
  std::vector<CoverageGap> gaps;
};

// Reprojects geographic boundaries onto UTM tiles when needed; any other CRS
// disagreement raises CrsMismatchError.
CropResult pair_and_crop(const TileIndex& tiles, const BoundarySet& boundaries,
                         const CropOptions& options);

}  // namespace nbhd::geo
