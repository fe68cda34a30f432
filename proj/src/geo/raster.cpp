#include "nbhd/geo/raster.hpp"

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>

#include "nbhd/core/error.hpp"

namespace nbhd::geo {

Raster::Raster(int width, int height, int channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0 || channels < 1) {
    throw InputError("invalid raster dimensions " + std::to_string(width) + "x" +
                     std::to_string(height) + "x" + std::to_string(channels));
  }
  pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

bool Raster::nonzero(int row, int col) const {
  const std::uint8_t* p = &pixels_[(static_cast<std::size_t>(row) * width_ + col) * channels_];
  for (int c = 0; c < channels_; ++c) {
    if (p[c] != 0) return true;
  }
  return false;
}

std::size_t Raster::count_nonzero() const {
  std::size_t n = 0;
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) n += nonzero(r, c) ? 1 : 0;
  }
  return n;
}

Raster Raster::window(int row0, int col0, int height, int width) const {
  Raster out(width, height, channels_);
  const int r_begin = std::max(0, row0);
  const int r_end = std::min(height_, row0 + height);
  const int c_begin = std::max(0, col0);
  const int c_end = std::min(width_, col0 + width);
  if (r_begin >= r_end || c_begin >= c_end) return out;
  const std::size_t run = static_cast<std::size_t>(c_end - c_begin) * channels_;
  for (int r = r_begin; r < r_end; ++r) {
    std::memcpy(&out.at(r - row0, c_begin - col0, 0), &at(r, c_begin, 0), run);
  }
  return out;
}

Raster Raster::first_channels(int n) const {
  if (n >= channels_) return *this;
  Raster out(width_, height_, n);
  const std::size_t count = static_cast<std::size_t>(width_) * height_;
  for (std::size_t i = 0; i < count; ++i) {
    std::memcpy(&out.pixels_[i * n], &pixels_[i * channels_], static_cast<std::size_t>(n));
  }
  return out;
}

namespace {

constexpr ttag_t kTagModelPixelScale = 33550;
constexpr ttag_t kTagModelTiepoint = 33922;
constexpr ttag_t kTagGeoKeyDirectory = 34735;
constexpr ttag_t kTagGdalNodata = 42113;

constexpr std::uint16_t kKeyModelType = 1024;
constexpr std::uint16_t kKeyRasterType = 1025;
constexpr std::uint16_t kKeyGeographicType = 2048;
constexpr std::uint16_t kKeyProjectedCsType = 3072;

const TIFFFieldInfo kGeoFieldInfo[] = {
    {kTagModelPixelScale, -1, -1, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1,
     const_cast<char*>("ModelPixelScaleTag")},
    {kTagModelTiepoint, -1, -1, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1,
     const_cast<char*>("ModelTiepointTag")},
    {kTagGeoKeyDirectory, -1, -1, TIFF_SHORT, FIELD_CUSTOM, 1, 1,
     const_cast<char*>("GeoKeyDirectoryTag")},
    {kTagGdalNodata, -1, -1, TIFF_ASCII, FIELD_CUSTOM, 1, 0,
     const_cast<char*>("GDALNoDataValue")},
};

TIFFExtendProc g_parent_extender = nullptr;

void geo_tag_extender(TIFF* tif) {
  TIFFMergeFieldInfo(tif, kGeoFieldInfo, sizeof(kGeoFieldInfo) / sizeof(kGeoFieldInfo[0]));
  if (g_parent_extender) g_parent_extender(tif);
}

void install_geo_tags() {
  static std::once_flag once;
  std::call_once(once, [] {
    g_parent_extender = TIFFSetTagExtender(geo_tag_extender);
    // Silence libtiff's stderr chatter on unknown private tags.
    TIFFSetWarningHandler(nullptr);
  });
}

struct TiffCloser {
  void operator()(TIFF* t) const {
    if (t) TIFFClose(t);
  }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

TiffPtr open_tiff(const std::filesystem::path& path, const char* mode) {
  install_geo_tags();
  TiffPtr tif(TIFFOpen(path.c_str(), mode));
  if (!tif) throw IoError("cannot open TIFF " + path.string());
  return tif;
}

Raster read_pixels(TIFF* tif, const std::filesystem::path& path) {
  std::uint32_t width = 0, height = 0;
  std::uint16_t spp = 1, bps = 8, planar = PLANARCONFIG_CONTIG, format = SAMPLEFORMAT_UINT;
  TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &width);
  TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &height);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif, TIFFTAG_BITSPERSAMPLE, &bps);
  TIFFGetFieldDefaulted(tif, TIFFTAG_PLANARCONFIG, &planar);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLEFORMAT, &format);
  if (bps != 8 || format != SAMPLEFORMAT_UINT) {
    throw InputError(path.string() + ": only 8-bit unsigned imagery is supported (bits=" +
                     std::to_string(bps) + ")");
  }
  Raster out(static_cast<int>(width), static_cast<int>(height), spp);

  if (TIFFIsTiled(tif)) {
    std::uint32_t tw = 0, th = 0;
    TIFFGetField(tif, TIFFTAG_TILEWIDTH, &tw);
    TIFFGetField(tif, TIFFTAG_TILELENGTH, &th);
    std::vector<std::uint8_t> buf(TIFFTileSize(tif));
    const int planes = planar == PLANARCONFIG_SEPARATE ? spp : 1;
    for (int plane = 0; plane < planes; ++plane) {
      for (std::uint32_t y = 0; y < height; y += th) {
        for (std::uint32_t x = 0; x < width; x += tw) {
          if (TIFFReadTile(tif, buf.data(), x, y, 0, static_cast<tsample_t>(plane)) < 0) {
            throw IoError(path.string() + ": failed reading tile");
          }
          for (std::uint32_t ty = 0; ty < th && y + ty < height; ++ty) {
            for (std::uint32_t tx = 0; tx < tw && x + tx < width; ++tx) {
              if (planar == PLANARCONFIG_SEPARATE) {
                out.at(static_cast<int>(y + ty), static_cast<int>(x + tx), plane) =
                    buf[ty * tw + tx];
              } else {
                std::memcpy(&out.at(static_cast<int>(y + ty), static_cast<int>(x + tx), 0),
                            &buf[(ty * tw + tx) * spp], spp);
              }
            }
          }
        }
      }
    }
    return out;
  }

  std::vector<std::uint8_t> line(TIFFScanlineSize(tif));
  if (planar == PLANARCONFIG_SEPARATE) {
    for (int s = 0; s < spp; ++s) {
      for (std::uint32_t row = 0; row < height; ++row) {
        if (TIFFReadScanline(tif, line.data(), row, static_cast<tsample_t>(s)) < 0) {
          throw IoError(path.string() + ": failed reading scanline");
        }
        for (std::uint32_t col = 0; col < width; ++col) {
          out.at(static_cast<int>(row), static_cast<int>(col), s) = line[col];
        }
      }
    }
  } else {
    for (std::uint32_t row = 0; row < height; ++row) {
      if (TIFFReadScanline(tif, line.data(), row, 0) < 0) {
        throw IoError(path.string() + ": failed reading scanline");
      }
      std::memcpy(&out.at(static_cast<int>(row), 0, 0), line.data(),
                  static_cast<std::size_t>(width) * spp);
    }
  }
  return out;
}

void write_pixels(TIFF* tif, const Raster& r, const std::filesystem::path& path) {
  TIFFSetField(tif, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(r.width()));
  TIFFSetField(tif, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(r.height()));
  TIFFSetField(tif, TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(r.channels()));
  TIFFSetField(tif, TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(8));
  TIFFSetField(tif, TIFFTAG_SAMPLEFORMAT, SAMPLEFORMAT_UINT);
  TIFFSetField(tif, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(tif, TIFFTAG_PHOTOMETRIC,
               r.channels() >= 3 ? PHOTOMETRIC_RGB : PHOTOMETRIC_MINISBLACK);
  if (r.channels() > 3 || r.channels() == 2) {
    const int extra = r.channels() >= 3 ? r.channels() - 3 : r.channels() - 1;
    std::vector<std::uint16_t> kinds(static_cast<std::size_t>(extra), EXTRASAMPLE_UNSPECIFIED);
    TIFFSetField(tif, TIFFTAG_EXTRASAMPLES, static_cast<std::uint16_t>(extra), kinds.data());
  }
  TIFFSetField(tif, TIFFTAG_COMPRESSION, COMPRESSION_ADOBE_DEFLATE);
  TIFFSetField(tif, TIFFTAG_ZIPQUALITY, 1);
  TIFFSetField(tif, TIFFTAG_PREDICTOR, PREDICTOR_HORIZONTAL);
  TIFFSetField(tif, TIFFTAG_ROWSPERSTRIP, TIFFDefaultStripSize(tif, 0));
  std::vector<std::uint8_t> line(static_cast<std::size_t>(r.width()) * r.channels());
  for (int row = 0; row < r.height(); ++row) {
    if (r.width() > 0) {
      std::memcpy(line.data(), &r.at(row, 0, 0), line.size());
    }
    if (TIFFWriteScanline(tif, line.data(), static_cast<std::uint32_t>(row), 0) < 0) {
      throw IoError("failed writing " + path.string());
    }
  }
}

template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& writer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  writer(tmp);
  std::filesystem::rename(tmp, path);
}

}  // namespace

namespace {

GeoRasterInfo read_info(TIFF* tif, const std::filesystem::path& path) {
  GeoRasterInfo info;
  std::uint32_t width = 0, height = 0;
  std::uint16_t spp = 1;
  TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &width);
  TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &height);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLESPERPIXEL, &spp);
  info.width = static_cast<int>(width);
  info.height = static_cast<int>(height);
  info.channels = spp;

  std::uint32_t count = 0;
  double* scale = nullptr;
  double* tie = nullptr;
  if (TIFFGetField(tif, kTagModelPixelScale, &count, &scale) && count >= 2) {
    const double sx = scale[0];
    const double sy = scale[1];
    if (std::abs(sx - sy) > 1e-9 * std::max(std::abs(sx), 1.0)) {
      throw InputError(path.string() + ": non-square pixels are not supported");
    }
    info.transform.pixel_size = sx;
  } else {
    throw InputError(path.string() + ": missing ModelPixelScale georeference");
  }
  if (TIFFGetField(tif, kTagModelTiepoint, &count, &tie) && count >= 6) {
    // Tiepoint maps raster (i,j) to model (X,Y).
    info.transform.origin_x = tie[3] - tie[0] * info.transform.pixel_size;
    info.transform.origin_y = tie[4] + tie[1] * info.transform.pixel_size;
  } else {
    throw InputError(path.string() + ": missing ModelTiepoint georeference");
  }
  if (!(info.transform.pixel_size > 0.0)) {
    throw InputError(path.string() + ": ground sample distance must be positive");
  }

  std::uint16_t* keys = nullptr;
  if (TIFFGetField(tif, kTagGeoKeyDirectory, &count, &keys) && count >= 4) {
    const std::uint16_t nkeys = keys[3];
    for (std::uint16_t k = 0; k < nkeys && 4u + 4u * k + 3u < count; ++k) {
      const std::uint16_t* e = keys + 4 + 4 * k;
      if ((e[0] == kKeyProjectedCsType || e[0] == kKeyGeographicType) && e[1] == 0) {
        if (e[0] == kKeyProjectedCsType || info.epsg == 0) info.epsg = e[3];
      }
    }
  }
  char* nodata = nullptr;
  if (TIFFGetField(tif, kTagGdalNodata, &nodata) && nodata) {
    info.nodata = std::strtod(nodata, nullptr);
  }
  char* datetime = nullptr;
  if (TIFFGetField(tif, TIFFTAG_DATETIME, &datetime) && datetime) {
    info.year = std::atoi(datetime);
  }
  return info;
}

}  // namespace

GeoRasterInfo read_geotiff_info(const std::filesystem::path& path) {
  auto tif = open_tiff(path, "r");
  return read_info(tif.get(), path);
}

GeoRaster read_geotiff(const std::filesystem::path& path) {
  auto tif = open_tiff(path, "r");
  const GeoRasterInfo info = read_info(tif.get(), path);
  GeoRaster out;
  out.image = read_pixels(tif.get(), path);
  out.transform = info.transform;
  out.epsg = info.epsg;
  out.nodata = info.nodata;
  out.year = info.year;
  return out;
}

void write_geotiff(const std::filesystem::path& path, const GeoRaster& raster) {
  write_atomically(path, [&](const std::filesystem::path& tmp) {
    auto tif = open_tiff(tmp, "w");
    write_pixels(tif.get(), raster.image, path);
    double scale[3] = {raster.transform.pixel_size, raster.transform.pixel_size, 0.0};
    double tie[6] = {0.0, 0.0, 0.0, raster.transform.origin_x, raster.transform.origin_y, 0.0};
    TIFFSetField(tif.get(), kTagModelPixelScale, 3, scale);
    TIFFSetField(tif.get(), kTagModelTiepoint, 6, tie);
    const bool geographic = raster.epsg == 4326 || raster.epsg == 4269;
    std::vector<std::uint16_t> keys = {1, 1, 0, 0};
    auto add_key = [&keys](std::uint16_t id, std::uint16_t v) {
      keys.insert(keys.end(), {id, 0, 1, v});
      ++keys[3];
    };
    add_key(kKeyModelType, geographic ? 2 : 1);
    add_key(kKeyRasterType, 1);
    if (raster.epsg != 0) {
      add_key(geographic ? kKeyGeographicType : kKeyProjectedCsType,
              static_cast<std::uint16_t>(raster.epsg));
    }
    TIFFSetField(tif.get(), kTagGeoKeyDirectory, static_cast<std::uint32_t>(keys.size()),
                 keys.data());
    if (raster.year > 0) {
      const std::string stamp = std::to_string(raster.year) + ":01:01 00:00:00";
      TIFFSetField(tif.get(), TIFFTAG_DATETIME, stamp.c_str());
    }
    if (raster.nodata) {
      std::string s = std::to_string(*raster.nodata);
      TIFFSetField(tif.get(), kTagGdalNodata, s.c_str());
    }
    if (!TIFFWriteDirectory(tif.get())) throw IoError("failed writing " + path.string());
  });
}

void write_tiff(const std::filesystem::path& path, const Raster& raster) {
  write_atomically(path, [&](const std::filesystem::path& tmp) {
    auto tif = open_tiff(tmp, "w");
    write_pixels(tif.get(), raster, path);
    if (!TIFFWriteDirectory(tif.get())) throw IoError("failed writing " + path.string());
  });
}

Raster read_tiff(const std::filesystem::path& path) {
  auto tif = open_tiff(path, "r");
  return read_pixels(tif.get(), path);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Raster& raster) {
  if (raster.channels() != 1 && raster.channels() != 3 && raster.channels() != 4) {
    throw InputError("PNG output needs 1, 3 or 4 channels");
  }
  write_atomically(path, [&](const std::filesystem::path& tmp) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    const int color = raster.channels() == 1   ? PNG_COLOR_TYPE_GRAY
                      : raster.channels() == 3 ? PNG_COLOR_TYPE_RGB
                                               : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width()),
                 static_cast<png_uint_32>(raster.height()), 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int row = 0; row < raster.height(); ++row) {
      png_write_row(png, const_cast<png_bytep>(&raster.at(row, 0, 0)));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  });
}

Raster read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  Raster out(w, h, ch);
  for (int row = 0; row < h; ++row) png_read_row(png, &out.at(row, 0, 0), nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace nbhd::geo
