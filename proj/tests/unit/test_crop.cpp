#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/crop/crop_engine.hpp"
#include "nbhd/geo/raster.hpp"
#include "support.hpp"

using namespace nbhd;
using namespace nbhd::crop;
using geo::Raster;

namespace {

// Brute-force count of patches whose nonzero share is above the threshold.
std::size_t oracle_kept(const Raster& img, int size, double thr) {
  const int nr = (img.height() + size - 1) / size, nc = (img.width() + size - 1) / size;
  std::size_t kept = 0;
  for (int pr = 0; pr < nr; ++pr) {
    for (int pc = 0; pc < nc; ++pc) {
      long nz = 0;
      for (int r = pr * size; r < std::min(img.height(), (pr + 1) * size); ++r)
        for (int c = pc * size; c < std::min(img.width(), (pc + 1) * size); ++c) nz += img.nonzero(r, c);
      if (static_cast<double>(nz) / (static_cast<double>(size) * size) > thr) ++kept;
    }
  }
  return kept;
}

Raster ellipse_crop(int w, int h, double fill_rx, double fill_ry, Rng& rng) {
  Raster img(w, h, 3);
  const double cx = w / 2.0, cy = h / 2.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double dx = (c + 0.5 - cx) / (fill_rx * w / 2), dy = (r + 0.5 - cy) / (fill_ry * h / 2);
      if (dx * dx + dy * dy <= 1.0) {
        img.at(r, c, 0) = static_cast<std::uint8_t>(1 + rng.below(255));
        img.at(r, c, 1) = static_cast<std::uint8_t>(rng.below(256));
      }
    }
  }
  return img;
}

}  // namespace

TEST(Patchify, SixPatchesFromMedianSizedNeighborhood) {
  // Median-sized crop whose polygon covers the top two patch rows: the third
  // column is 329 px wide (64% of a patch), the bottom row is empty.
  Raster img(1353, 1350, 3);
  for (int r = 0; r < 1024; ++r)
    for (int c = 0; c < 1353; ++c) img.at(r, c, 2) = 90;
  EXPECT_EQ(patch_candidate_count(1353, 1350, 512), 9u);
  const auto patches = patchify(img, "g", 512, 0.5);
  ASSERT_EQ(patches.size(), 6u);
  std::set<std::pair<int, int>> cells;
  for (const auto& p : patches) {
    EXPECT_EQ(p.pixels.width(), 512);
    EXPECT_EQ(p.pixels.height(), 512);
    EXPECT_GT(p.nonzero_fraction, 0.5);
    EXPECT_LT(p.grid_row, 2);
    cells.insert({p.grid_row, p.grid_col});
  }
  EXPECT_EQ(cells.size(), 6u);
  // Padding is zeros on the right.
  const auto& last = *std::find_if(patches.begin(), patches.end(),
                                   [](const Patch& p) { return p.grid_row == 0 && p.grid_col == 2; });
  EXPECT_EQ(last.pixels.at(0, 400, 2), 0);
  EXPECT_EQ(last.pixels.at(0, 300, 2), 90);
}

TEST(Patchify, TrivialAndThresholdCases) {
  EXPECT_EQ(patchify(Raster(512, 512, 3, 7), "g").size(), 1u);
  EXPECT_TRUE(patchify(Raster(300, 200, 3, 7), "g").empty());  // 60000 / 262144 of a patch
  // Exactly half nonzero is dropped (strict inequality).
  Raster half(512, 512, 3);
  for (int r = 0; r < 256; ++r)
    for (int c = 0; c < 512; ++c) half.at(r, c, 0) = 1;
  EXPECT_TRUE(patchify(half, "g").empty());
  half.at(300, 0, 0) = 1;
  EXPECT_EQ(patchify(half, "g").size(), 1u);
}

TEST(Patchify, MedianCropMatchesBruteForceMask) {
  Rng rng(5);
  const Raster img = ellipse_crop(1353, 1350, 0.9, 0.8, rng);
  const auto patches = patchify(img, "g", 512, 0.5);
  EXPECT_EQ(patches.size(), oracle_kept(img, 512, 0.5));
}

TEST(Patchify, CandidateCountPropertyOverRandomCrops) {
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const int w = 1 + static_cast<int>(rng.below(160));
    const int h = 1 + static_cast<int>(rng.below(160));
    const int size = 8 + static_cast<int>(rng.below(40));
    const auto expect = static_cast<std::size_t>(((w + size - 1) / size) * ((h + size - 1) / size));
    ASSERT_EQ(patch_candidate_count(w, h, size), expect);
    const Raster img = ellipse_crop(w, h, rng.uniform(0.2, 1.6), rng.uniform(0.2, 1.6), rng);
    const auto patches = patchify(img, "g", size, 0.5);
    ASSERT_LE(patches.size(), expect);
    ASSERT_EQ(patches.size(), oracle_kept(img, size, 0.5)) << w << "x" << h << " size " << size;
    for (const auto& p : patches) ASSERT_GT(p.nonzero_fraction, 0.5);
  }
}

TEST(Resize, IdentityAndConstant) {
  Rng rng(1);
  const Raster img = ellipse_crop(1353, 1350, 1.2, 1.2, rng);
  EXPECT_EQ(resize_to_median(img, "g").pixels, img);
  const auto r = resize_to_median(Raster(211, 97, 3, 123), "g");
  EXPECT_EQ(r.pixels.width(), 1353);
  EXPECT_EQ(r.pixels.height(), 1350);
  EXPECT_EQ(r.orig_width, 211);
  EXPECT_EQ(r.orig_height, 97);
  for (auto v : r.pixels.data()) ASSERT_EQ(v, 123);
}

TEST(Resize, HalfScaleMatchesBoxAverage) {
  // With pixel-centre alignment a 2:1 reduction samples exactly between four
  // source pixels, so the reference is their mean.
  Rng rng(8);
  Raster img(2706, 2700, 3);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.below(256));
  const Raster out = resize_to_median(img, "g").pixels;
  for (int r = 0; r < 1350; r += 7) {
    for (int c = 0; c < 1353; c += 5) {
      for (int k = 0; k < 3; ++k) {
        const double ref = (img.at(2 * r, 2 * c, k) + img.at(2 * r, 2 * c + 1, k) + img.at(2 * r + 1, 2 * c, k) +
                            img.at(2 * r + 1, 2 * c + 1, k)) /
                           4.0;
        ASSERT_LE(std::fabs(out.at(r, c, k) - ref), 1.0) << r << "," << c;
      }
    }
  }
}

TEST(Resize, PreservesValueRange) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    Raster img(5 + static_cast<int>(rng.below(60)), 5 + static_cast<int>(rng.below(60)), 3);
    const int lo = static_cast<int>(rng.below(100)), hi = lo + static_cast<int>(rng.below(150));
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.range(lo, hi));
    const Raster out = resize_bilinear(img, 3 + static_cast<int>(rng.below(90)), 3 + static_cast<int>(rng.below(90)));
    for (auto v : out.data()) {
      ASSERT_GE(v, lo);
      ASSERT_LE(v, hi);
    }
  }
}

TEST(WeightedSampling, FirstPickFrequenciesMatchWeights) {
  // 120 candidates: 60 fully inside (weight 1.0), 60 barely touching (0.1).
  std::vector<double> w(120);
  for (int i = 0; i < 120; ++i) w[i] = i < 60 ? 1.0 : 0.1;
  const double total = 66.0;
  std::vector<double> counts(120, 0.0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    Rng rng(derive_seed(99, "draw:" + std::to_string(d)));
    const auto pick = weighted_sample_without_replacement(w, 50, rng);
    ASSERT_EQ(pick.size(), 50u);
    ASSERT_EQ(std::set<std::size_t>(pick.begin(), pick.end()).size(), 50u);
    counts[pick.front()] += 1;
  }
  double chi2 = 0.0;
  for (int i = 0; i < 120; ++i) {
    const double e = draws * w[i] / total;
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  const boost::math::chi_squared dist(119);
  const double p = 1.0 - boost::math::cdf(dist, chi2);
  EXPECT_GT(p, 0.01) << "chi2=" << chi2;
  // Strata ratio 10:1 per candidate.
  double hi = 0, lo = 0;
  for (int i = 0; i < 120; ++i) (i < 60 ? hi : lo) += counts[i];
  EXPECT_NEAR(hi / lo, 10.0, 1.5);
}

TEST(WeightedSampling, EdgeCases) {
  Rng rng(1);
  EXPECT_EQ(weighted_sample_without_replacement({1, 2, 3}, 5, rng).size(), 3u);
  EXPECT_THROW(weighted_sample_without_replacement({1, 0, 3}, 2, rng), InputError);
}

TEST(GridCap, CapAndNoDuplicates) {
  Rng rng(3);
  std::vector<GridCell> cands;
  std::map<std::string, int> per;
  for (int h = 0; h < 40; ++h) {
    const int n = 1 + static_cast<int>(rng.below(140));
    for (int i = 0; i < n; ++i) {
      cands.push_back({"g" + std::to_string(h), i / 12, i % 12, rng.uniform(0.01, 1.0)});
    }
    per["g" + std::to_string(h)] = n;
  }
  const auto a = cap_candidates(cands, 50, 7);
  const auto b = cap_candidates(cands, 50, 7);
  ASSERT_EQ(a.size(), b.size());
  std::map<std::string, std::set<std::pair<int, int>>> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].geoid, b[i].geoid);
    EXPECT_EQ(a[i].grid_row, b[i].grid_row);
    EXPECT_EQ(a[i].grid_col, b[i].grid_col);
    EXPECT_TRUE(seen[a[i].geoid].insert({a[i].grid_row, a[i].grid_col}).second);
  }
  for (const auto& [g, n] : per) {
    EXPECT_EQ(seen[g].size(), static_cast<std::size_t>(std::min(n, 50)));
  }
}

class GridFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    geo::GeoRaster g;
    g.image = Raster(1200, 1200, 3, 50);
    g.transform = {500000.0, 4001200.0, 1.0};
    g.epsg = 32610;
    geo::write_geotiff(dir / "t.tif", g);
  }
  test::TempDir dir{"grid"};
};

TEST_F(GridFixture, SamplesRespectCapAndAnchor) {
  geo::TileIndex tiles({dir / "t.tif"});
  auto sq = [](double x0, double y0, double x1, double y1) {
    return geo::Polygon{{geo::Ring{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}}};
  };
  std::vector<geo::BoundaryRecord> b = {
      {"big", sq(500010, 4000010, 501190, 4001190), "06", "085"},
      {"small", sq(500120, 4000120, 500400, 4000400), "06", "085"},
  };
  const auto all = grid_candidates(tiles, b, {});
  const auto cells = grid_sample(tiles, b, {}, 3);
  std::map<std::string, int> n_all, n_kept;
  for (const auto& c : all) {
    ++n_all[c.geoid];
    EXPECT_GT(c.overlap_fraction, 0.0);
    EXPECT_LE(c.overlap_fraction, 1.0);
  }
  for (const auto& c : cells) ++n_kept[c.geoid];
  EXPECT_EQ(n_all["big"], 121);  // 11 x 11 cells touch the polygon
  EXPECT_EQ(n_kept["big"], 50);
  EXPECT_EQ(n_kept["small"], n_all["small"]);
  const auto again = grid_sample(tiles, b, {}, 3);
  ASSERT_EQ(again.size(), cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) EXPECT_EQ(again[i].grid_row, cells[i].grid_row);
  const Raster px = read_grid_cell(tiles, cells.front(), 112, 3);
  EXPECT_EQ(px.width(), 112);
  EXPECT_EQ(px.height(), 112);
}
