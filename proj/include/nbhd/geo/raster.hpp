#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace nbhd::geo {

// North-up affine georeference. Pixel (col,row) has its top-left corner at
// (origin_x + col*pixel_size, origin_y - row*pixel_size).
struct GeoTransform {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 1.0;  // ground sample distance, map units per pixel

  double x_of_col(double col) const { return origin_x + col * pixel_size; }
  double y_of_row(double row) const { return origin_y - row * pixel_size; }
  double col_of_x(double x) const { return (x - origin_x) / pixel_size; }
  double row_of_y(double y) const { return (origin_y - y) / pixel_size; }

  bool operator==(const GeoTransform&) const = default;
};

// Interleaved 8-bit image, row-major, channels fastest.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels, std::uint8_t fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t& at(int row, int col, int ch) {
    return pixels_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  const std::uint8_t& at(int row, int col, int ch) const {
    return pixels_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  std::span<std::uint8_t> pixel(int row, int col) {
    return {&pixels_[(static_cast<std::size_t>(row) * width_ + col) * channels_],
            static_cast<std::size_t>(channels_)};
  }
  std::span<const std::uint8_t> pixel(int row, int col) const {
    return {&pixels_[(static_cast<std::size_t>(row) * width_ + col) * channels_],
            static_cast<std::size_t>(channels_)};
  }
  bool nonzero(int row, int col) const;

  std::vector<std::uint8_t>& data() { return pixels_; }
  const std::vector<std::uint8_t>& data() const { return pixels_; }

  std::size_t count_nonzero() const;
  // Sub-window copy; regions outside the raster are zero.
  Raster window(int row0, int col0, int height, int width) const;
  // Keeps the first `n` channels.
  Raster first_channels(int n) const;

  bool operator==(const Raster&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

struct GeoRaster {
  Raster image;
  GeoTransform transform;
  int epsg = 0;  // 0 = unknown
  std::optional<double> nodata;
  int year = 0;  // acquisition year from the TIFF DateTime tag, 0 = unknown
};

// Header-only view of a GeoTIFF: dimensions and georeference without pixels.
struct GeoRasterInfo {
  int width = 0;
  int height = 0;
  int channels = 0;
  GeoTransform transform;
  int epsg = 0;
  std::optional<double> nodata;
  int year = 0;
};

GeoRaster read_geotiff(const std::filesystem::path& path);
GeoRasterInfo read_geotiff_info(const std::filesystem::path& path);
void write_geotiff(const std::filesystem::path& path, const GeoRaster& raster);

// Plain (non-georeferenced) lossless storage for model inputs.
void write_tiff(const std::filesystem::path& path, const Raster& raster);
Raster read_tiff(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Raster& raster);
Raster read_png(const std::filesystem::path& path);

}  // namespace nbhd::geo
