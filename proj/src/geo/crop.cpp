#include "nbhd/geo/crop.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "nbhd/core/error.hpp"

namespace nbhd::geo {

TileIndex::TileIndex(std::vector<std::filesystem::path> paths, std::size_t cache_capacity)
    : paths_(std::move(paths)), capacity_(std::max<std::size_t>(1, cache_capacity)) {
  std::sort(paths_.begin(), paths_.end());
  for (const auto& p : paths_) {
    infos_.push_back(read_geotiff_info(p));
    const auto& info = infos_.back();
    if (infos_.size() == 1) {
      epsg_ = info.epsg;
      gsd_ = info.transform.pixel_size;
      continue;
    }
    if (info.epsg != epsg_) {
      throw CrsMismatchError(p.string() + ": tile CRS EPSG:" + std::to_string(info.epsg) +
                             " differs from EPSG:" + std::to_string(epsg_));
    }
    if (std::abs(info.transform.pixel_size - gsd_) > 1e-9 * gsd_) {
      throw InputError(p.string() + ": tile pixel size differs from the other tiles");
    }
  }
}

BBox TileIndex::extent(std::size_t i) const {
  const auto& info = infos_[i];
  BBox b;
  b.extend(Point{info.transform.origin_x, info.transform.origin_y});
  b.extend(Point{info.transform.x_of_col(info.width), info.transform.y_of_row(info.height)});
  return b;
}

std::shared_ptr<const GeoRaster> TileIndex::load(std::size_t i) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (std::size_t k = 0; k < cache_.size(); ++k) {
      if (cache_[k].first == i) {
        auto hit = cache_[k];
        cache_.erase(cache_.begin() + static_cast<std::ptrdiff_t>(k));
        cache_.push_back(hit);
        return hit.second;
      }
    }
  }
  auto raster = std::make_shared<const GeoRaster>(read_geotiff(paths_[i]));
  std::lock_guard<std::mutex> lock(mu_);
  cache_.emplace_back(i, raster);
  while (cache_.size() > capacity_) cache_.erase(cache_.begin());
  return raster;
}

std::vector<std::uint8_t> rasterize_mask(const Polygon& poly, const GeoTransform& transform,
                                         int width, int height) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
  std::vector<double> crossings;
  for (int row = 0; row < height; ++row) {
    const double y = transform.y_of_row(row + 0.5);
    crossings.clear();
    for (const auto& ring : poly.rings) {
      const std::size_t n = ring.size();
      if (n < 3) continue;
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = ring[i];
        const Point& b = ring[j];
        if ((a.y > y) != (b.y > y)) {
          // Same expression as Polygon::contains so both agree bit-for-bit.
          crossings.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
      }
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
      // Inside on [x_in, x_out) for pixel centres; the comparisons below are
      // done in map units so rounding in the column conversion cannot leak.
      const double x_in = crossings[k];
      const double x_out = crossings[k + 1];
      const double start = std::floor(transform.col_of_x(x_in) - 0.5) - 1.0;
      int col = start < 0.0 ? 0 : static_cast<int>(std::min<double>(start, width));
      while (col < width && transform.x_of_col(col + 0.5) < x_in) ++col;
      for (; col < width && transform.x_of_col(col + 0.5) < x_out; ++col) {
        mask[static_cast<std::size_t>(row) * width + col] = 1;
      }
    }
  }
  return mask;
}

std::optional<RasterCrop> crop_neighborhood(const std::string& geoid, const Polygon& polygon,
                                            const TileIndex& tiles, const CropOptions& options,
                                            CoverageGap* gap) {
  const BBox box = polygon.bbox();
  if (!box.valid() || tiles.size() == 0) {
    if (gap) *gap = {geoid, "no_tiles"};
    return std::nullopt;
  }
  const double gsd = tiles.gsd();
  const int width = std::max(1, static_cast<int>(std::ceil(box.width() / gsd - 1e-9)));
  const int height = std::max(1, static_cast<int>(std::ceil(box.height() / gsd - 1e-9)));

  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles.extent(i).intersects(box)) hits.push_back(i);
  }
  if (hits.empty()) {
    if (gap) *gap = {geoid, "no_tile_coverage"};
    return std::nullopt;
  }
  int tile_channels = tiles.info(hits.front()).channels;
  for (auto i : hits) tile_channels = std::min(tile_channels, tiles.info(i).channels);
  const int channels = options.keep_ir ? std::min(tile_channels, 4) : std::min(tile_channels, 3);

  RasterCrop crop;
  crop.geoid = geoid;
  crop.epsg = tiles.epsg();
  crop.transform = GeoTransform{box.min_x, box.max_y, gsd};
  crop.pixels = Raster(width, height, channels);
  std::vector<std::uint8_t> mask = rasterize_mask(polygon, crop.transform, width, height);
  std::vector<std::uint8_t> filled(mask.size(), 0);
  std::map<int, std::size_t> year_pixels;

  for (auto ti : hits) {
    auto tile = tiles.load(ti);
    const auto& t = tile->transform;
    const auto& img = tile->image;
    std::size_t contributed = 0;
    for (int row = 0; row < height; ++row) {
      const double y = crop.transform.y_of_row(row + 0.5);
      const double trow = std::floor(t.row_of_y(y));
      if (trow < 0 || trow >= img.height()) continue;
      for (int col = 0; col < width; ++col) {
        const std::size_t idx = static_cast<std::size_t>(row) * width + col;
        if (!mask[idx] || filled[idx]) continue;
        const double x = crop.transform.x_of_col(col + 0.5);
        const double tcol = std::floor(t.col_of_x(x));
        if (tcol < 0 || tcol >= img.width()) continue;
        const auto src = img.pixel(static_cast<int>(trow), static_cast<int>(tcol));
        if (tile->nodata) {
          bool all_nodata = true;
          for (int c = 0; c < img.channels(); ++c) {
            all_nodata = all_nodata && src[static_cast<std::size_t>(c)] == *tile->nodata;
          }
          if (all_nodata) continue;
        }
        auto dst = crop.pixels.pixel(row, col);
        for (int c = 0; c < channels; ++c) dst[static_cast<std::size_t>(c)] = src[static_cast<std::size_t>(c)];
        filled[idx] = 1;
        ++contributed;
      }
    }
    if (contributed > 0) year_pixels[tile->year] += contributed;
  }

  for (auto f : filled) crop.mask_pixels += f;
  if (crop.mask_pixels == 0) {
    if (gap) *gap = {geoid, "no_pixels_inside_polygon"};
    return std::nullopt;
  }
  crop.nonzero_fraction =
      static_cast<double>(crop.mask_pixels) / (static_cast<double>(width) * height);
  std::size_t best = 0;
  for (const auto& [year, count] : year_pixels) {
    if (count > best) {
      best = count;
      crop.dominant_year = year;
    }
  }
  crop.multi_year = year_pixels.size() > 1;
  return crop;
}

CropResult pair_and_crop(const TileIndex& tiles, const BoundarySet& boundaries,
                         const CropOptions& options) {
  const int tile_epsg = tiles.epsg();
  const int bnd_epsg = boundaries.epsg;
  bool reproject = false;
  if (tile_epsg != 0 && bnd_epsg != 0 && tile_epsg != bnd_epsg) {
    if (is_geographic_epsg(bnd_epsg) && is_utm_epsg(tile_epsg)) {
      reproject = true;
    } else {
      throw CrsMismatchError("boundaries are EPSG:" + std::to_string(bnd_epsg) +
                             " but tiles are EPSG:" + std::to_string(tile_epsg));
    }
  }
  CropResult out;
  for (const auto& rec : boundaries.records) {
    const Polygon poly = reproject ? project_polygon(rec.polygon, bnd_epsg, tile_epsg) : rec.polygon;
    CoverageGap gap;
    auto crop = crop_neighborhood(rec.geoid, poly, tiles, options, &gap);
    if (crop) {
      out.crops.push_back(std::move(*crop));
    } else {
      spdlog::info("coverage gap geoid={} reason={}", gap.geoid, gap.reason);
      out.gaps.push_back(gap);
    }
  }
  return out;
}

}  // namespace nbhd::geo
