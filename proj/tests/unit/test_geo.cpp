#include <gtest/gtest.h>

#include <cmath>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/geo/boundaries.hpp"
#include "nbhd/geo/crop.hpp"
#include "nbhd/geo/geometry.hpp"
#include "nbhd/geo/raster.hpp"
#include "support.hpp"

using namespace nbhd;
using namespace nbhd::geo;

namespace {

// Krueger series to third order in n, written from the textbook form.
Point utm_oracle(double lon, double lat, int zone, bool south) {
  const double a = 6378137.0, f = 1.0 / 298.257223563, k0 = 0.9996;
  const double n = f / (2 - f);
  const double A = a / (1 + n) * (1 + n * n / 4 + n * n * n * n / 64);
  const double al[3] = {n / 2 - 2 * n * n / 3 + 5 * n * n * n / 16, 13 * n * n / 48 - 3 * n * n * n / 5,
                        61 * n * n * n / 240};
  const double d2r = M_PI / 180.0;
  const double phi = lat * d2r;
  const double lam = (lon - (zone * 6 - 183)) * d2r;
  const double c = 2 * std::sqrt(n) / (1 + n);
  const double t = std::sinh(std::atanh(std::sin(phi)) - c * std::atanh(c * std::sin(phi)));
  const double xi = std::atan2(t, std::cos(lam));
  const double eta = std::atanh(std::sin(lam) / std::sqrt(1 + t * t));
  double e = eta, nn = xi;
  for (int j = 1; j <= 3; ++j) {
    e += al[j - 1] * std::cos(2 * j * xi) * std::sinh(2 * j * eta);
    nn += al[j - 1] * std::sin(2 * j * xi) * std::cosh(2 * j * eta);
  }
  return {500000.0 + k0 * A * e, (south ? 10000000.0 : 0.0) + k0 * A * nn};
}

Polygon square(double x0, double y0, double x1, double y1) {
  return Polygon{{Ring{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}}};
}

}  // namespace

TEST(Utm, CentralMeridianKnownValues) {
  const Point p = lonlat_to_utm(-123.0, 0.0, 32610);
  EXPECT_NEAR(p.x, 500000.0, 1e-6);
  EXPECT_NEAR(p.y, 0.0, 1e-6);
  // Meridian arc to 45 deg on WGS84 is 4984944.378 m.
  EXPECT_NEAR(lonlat_to_utm(-123.0, 45.0, 32610).y, 0.9996 * 4984944.378, 0.01);
}

TEST(Utm, MatchesSeriesOracleAcrossZone) {
  Rng r(17);
  for (int i = 0; i < 500; ++i) {
    const double lon = -123.0 + r.uniform(-3, 3);
    const double lat = r.uniform(0.5, 70);
    const Point got = lonlat_to_utm(lon, lat, 32610);
    const Point want = utm_oracle(lon, lat, 10, false);
    ASSERT_NEAR(got.x, want.x, 0.01) << lon << "," << lat;
    ASSERT_NEAR(got.y, want.y, 0.01) << lon << "," << lat;
  }
  const Point s = lonlat_to_utm(151.2, -33.9, 32756);
  const Point so = utm_oracle(151.2, -33.9, 56, true);
  EXPECT_NEAR(s.x, so.x, 0.01);
  EXPECT_NEAR(s.y, so.y, 0.01);
}

TEST(Utm, RejectsUnknownCodes) {
  EXPECT_TRUE(is_utm_epsg(32610));
  EXPECT_TRUE(is_utm_epsg(26910));
  EXPECT_FALSE(is_utm_epsg(3857));
  EXPECT_TRUE(is_geographic_epsg(4326));
  EXPECT_THROW(project_polygon(square(0, 0, 1, 1), 4326, 3857), CrsMismatchError);
}

TEST(Polygon, AreaContainsAndHoles) {
  Polygon p = square(0, 0, 10, 10);
  EXPECT_DOUBLE_EQ(p.area(), 100.0);
  p.rings.push_back(Ring{{2, 2}, {4, 2}, {4, 4}, {2, 4}});
  EXPECT_DOUBLE_EQ(p.area(), 96.0);
  EXPECT_TRUE(p.contains({1, 1}));
  EXPECT_FALSE(p.contains({3, 3}));
  EXPECT_FALSE(p.contains({11, 1}));
}

TEST(Polygon, NormalizeAndSelfIntersection) {
  Polygon p{{Ring{{0, 0}, {1, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}}};
  EXPECT_FALSE(normalize_polygon(p).empty());
  EXPECT_EQ(p.vertex_count(), 4u);
  EXPECT_FALSE(self_intersects(p));
  Polygon bow{{Ring{{0, 0}, {2, 2}, {2, 0}, {0, 2}}}};
  EXPECT_TRUE(self_intersects(bow));
}

TEST(Rasterize, MatchesPixelCentreTest) {
  const Polygon tri{{Ring{{0.3, 0.2}, {37.9, 3.1}, {12.2, 29.7}}}};
  GeoTransform t;
  t.origin_x = 0;
  t.origin_y = 32;
  t.pixel_size = 1;
  const auto mask = rasterize_mask(tri, t, 40, 32);
  std::size_t n = 0;
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 40; ++c) {
      const bool in = tri.contains({c + 0.5, 32 - (r + 0.5)});
      ASSERT_EQ(mask[static_cast<std::size_t>(r) * 40 + c] != 0, in) << r << "," << c;
      n += in;
    }
  }
  EXPECT_GT(n, 300u);
}

TEST(GeoTiff, RoundTripKeepsGeoreference) {
  test::TempDir dir("tif");
  GeoRaster g;
  g.image = Raster(7, 5, 3);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c)
      for (int k = 0; k < 3; ++k) g.image.at(r, c, k) = static_cast<std::uint8_t>(r * 31 + c * 7 + k);
  g.transform = {500000.0, 4100000.0, 0.6};
  g.epsg = 32610;
  g.year = 2020;
  write_geotiff(dir / "a.tif", g);
  const GeoRaster h = read_geotiff(dir / "a.tif");
  EXPECT_EQ(h.image, g.image);
  EXPECT_EQ(h.transform, g.transform);
  EXPECT_EQ(h.epsg, 32610);
  EXPECT_EQ(h.year, 2020);
  EXPECT_THROW(read_geotiff(dir / "missing.tif"), Error);
}

TEST(Boundaries, GeoJsonRejectionsAreNotFatal) {
  const std::string text = R"({"type":"FeatureCollection","features":[
    {"type":"Feature","properties":{"GEOID":"060855001001"},
     "geometry":{"type":"Polygon","coordinates":[[[-122,37],[-121.99,37],[-121.99,37.01],[-122,37.01],[-122,37]]]}},
    {"type":"Feature","properties":{"GEOID":"060855001002"},
     "geometry":{"type":"Polygon","coordinates":[[[-122,37],[-121.99,37.01],[-121.99,37],[-122,37.01],[-122,37]]]}},
    {"type":"Feature","properties":{"GEOID":"060855001003"},"geometry":null},
    {"type":"Feature","properties":{"GEOID20":"060855001004"},
     "geometry":{"type":"MultiPolygon","coordinates":[[[[-122,37],[-121.99,37],[-121.99,37.01],[-122,37]]],[[[-121.9,37],[-121.89,37],[-121.89,37.01],[-121.9,37]]]]}}
  ]})";
  const BoundarySet s = parse_geojson_boundaries(text, "inline");
  EXPECT_EQ(s.epsg, 4326);
  ASSERT_EQ(s.records.size(), 2u);
  EXPECT_EQ(s.records[0].geoid, "060855001001");
  EXPECT_EQ(s.records[1].polygon.rings.size(), 2u);
  EXPECT_EQ(s.rejections.size(), 2u);
  EXPECT_THROW(parse_geojson_boundaries("{not json", "x"), ParseError);
}

class CropFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    GeoRaster g;
    g.image = Raster(100, 100, 3, 100);
    g.transform = {500000.0, 4000000.0, 1.0};
    g.epsg = 32610;
    write_geotiff(dir / "tile.tif", g);
  }
  test::TempDir dir{"crop"};
};

TEST_F(CropFixture, CropMasksOutsideAndCountsPixels) {
  TileIndex tiles({dir / "tile.tif"});
  BoundarySet set;
  set.epsg = 32610;
  set.records.push_back({"a", square(500010, 3999970, 500030, 3999990), "06", "085"});
  set.records.push_back({"b", Polygon{{Ring{{500040, 3999960}, {500080, 3999960}, {500040, 3999920}}}}, "06", "085"});
  set.records.push_back({"far", square(600000, 3000000, 600010, 3000010), "06", "085"});
  const CropResult res = pair_and_crop(tiles, set, {});
  ASSERT_EQ(res.crops.size(), 2u);
  ASSERT_EQ(res.gaps.size(), 1u);
  EXPECT_EQ(res.gaps[0].geoid, "far");
  const RasterCrop& a = res.crops[0];
  EXPECT_EQ(a.pixels.width(), 20);
  EXPECT_EQ(a.pixels.height(), 20);
  EXPECT_EQ(a.mask_pixels, 400u);
  EXPECT_DOUBLE_EQ(a.nonzero_fraction, 1.0);
  const RasterCrop& b = res.crops[1];
  EXPECT_EQ(b.pixels.count_nonzero(), b.mask_pixels);
  // Half the 40x40 box, give or take the diagonal.
  EXPECT_NEAR(static_cast<double>(b.mask_pixels), 800.0, 40.0);
  for (int r = 0; r < b.pixels.height(); ++r) {
    for (int c = 0; c < b.pixels.width(); ++c) {
      const bool in = set.records[1].polygon.contains(
          {b.transform.x_of_col(c + 0.5), b.transform.y_of_row(r + 0.5)});
      ASSERT_EQ(b.pixels.nonzero(r, c), in);
    }
  }
}

TEST_F(CropFixture, ForeignProjectedCrsIsRejected) {
  TileIndex tiles({dir / "tile.tif"});
  BoundarySet set;
  set.epsg = 32611;
  set.records.push_back({"a", square(500010, 3999970, 500030, 3999990), "06", "085"});
  EXPECT_THROW(pair_and_crop(tiles, set, {}), CrsMismatchError);
}
