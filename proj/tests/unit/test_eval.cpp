#include <gtest/gtest.h>

#include <cmath>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"
#include "nbhd/eval/explain.hpp"
#include "support.hpp"

using namespace nbhd;
using namespace nbhd::eval;
using geo::Raster;

namespace {

Raster noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Raster img(w, h, 3);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(1 + rng.below(255));
  return img;
}

double region_mean(const Raster& img, int grid, int gr, int gc) {
  const int r0 = gr * img.height() / grid, r1 = (gr + 1) * img.height() / grid;
  const int c0 = gc * img.width() / grid, c1 = (gc + 1) * img.width() / grid;
  double s = 0;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) s += img.at(r, c, 0);
  return s;
}

}  // namespace

TEST(Saliency, AdditiveModelGetsExactShares) {
  // For a model that is a weighted sum of per-region terms, Shapley values
  // are exactly those terms, whatever orderings are sampled.
  const Raster img = noise_image(64, 64, 1);
  const int g = 4;
  auto model = [&](const Raster& x) {
    double out = 1.5;
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) out += (r * g + c - 7) * 1e-3 * region_mean(x, g, r, c);
    return out;
  };
  SaliencyOptions o;
  o.grid = g;
  o.permutations = 3;
  o.seed = 5;
  const auto m = cnn_saliency(model, img, o);
  ASSERT_EQ(m.regions.size(), 16u);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c)
      EXPECT_NEAR(m.regions[r * g + c], (r * g + c - 7) * 1e-3 * region_mean(img, g, r, c), 1e-6);
  EXPECT_NEAR(m.baseline, 1.5, 1e-12);
}

TEST(Saliency, CompletenessForNonlinearModel) {
  const Raster img = noise_image(40, 48, 2);
  auto model = [](const Raster& x) {
    double s = 0;
    for (int r = 0; r < x.height(); r += 3)
      for (int c = 0; c < x.width(); c += 2) s += x.at(r, c, 1) * (r < 20 ? 1.0 : -0.5);
    return std::tanh(s / 1e5) + s * s * 1e-10;
  };
  SaliencyOptions o;
  o.grid = 5;
  o.permutations = 6;
  const auto m = cnn_saliency(model, img, o);
  double sum = 0;
  for (double v : m.regions) sum += v;
  EXPECT_NEAR(sum, m.prediction - m.baseline, 1e-9);
  EXPECT_NEAR(m.prediction, model(img), 1e-12);
  const auto px = m.pixel_map(40, 48);
  double psum = 0;
  for (double v : px) psum += v;
  EXPECT_NEAR(psum, sum, 1e-6);
  const Raster ov = saliency_overlay(img, m);
  EXPECT_EQ(ov.width(), 40);
  o.grid = 9;
  EXPECT_THROW(cnn_saliency(model, img, o), Error);
}

TEST(ResizeError, RecoversExponentialDecay) {
  std::vector<ResizeObservation> obs;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    ResizeObservation o;
    o.geoid = "g" + std::to_string(i);
    o.orig_width = 1353 + static_cast<int>(rng.range(-1000, 2000));
    o.orig_height = 1350 + (o.orig_width - 1353) + static_cast<int>(rng.range(-10, 10));
    const double s = ((o.orig_width - 1353) + (o.orig_height - 1350)) / 2.0;
    o.truth = 1000;
    o.prediction = 1000 + 5000 * std::exp(-0.002 * s);
    obs.push_back(o);
  }
  const auto a = resize_error_analysis(obs, 1353, 1350, 6);
  EXPECT_NEAR(a.slope, -0.002, 2e-4);
  EXPECT_EQ(a.rows.size(), 200u);
  int total = 0;
  for (const auto& b : a.bins) total += b.count;
  EXPECT_EQ(total, 200);
  test::TempDir dir("resize");
  write_resize_error(dir.path(), a);
  EXPECT_TRUE(std::filesystem::exists(dir / "resize_error.svg"));
  EXPECT_EQ(Table::read(dir / "resize_error.tsv").size(), 200u);
  obs[0].orig_width = 0;
  EXPECT_THROW(resize_error_analysis(obs, 1353, 1350), InputError);
}

TEST(Choropleth, BinsAndMissingGeometry) {
  test::TempDir dir("map");
  std::vector<geo::BoundaryRecord> b;
  std::map<std::string, double> v;
  for (int i = 0; i < 30; ++i) {
    const double x = i % 6, y = i / 6;
    b.push_back({"g" + std::to_string(i), geo::Polygon{{geo::Ring{{x, y}, {x + 1, y}, {x + 1, y + 1}, {x, y + 1}}}},
                 "06", "085"});
    v["g" + std::to_string(i)] = i * i;
  }
  v["ghost"] = 3.0;
  const auto r = choropleth(v, b, "density", dir / "m.svg", 5);
  EXPECT_EQ(r.bins, 5);
  EXPECT_EQ(r.drawn, 30);
  EXPECT_EQ(r.missing_geometry, (std::vector<std::string>{"ghost"}));
  for (std::size_t i = 1; i < r.edges.size(); ++i) EXPECT_LT(r.edges[i - 1], r.edges[i]);
  EXPECT_TRUE(std::filesystem::exists(dir / "m.svg"));
  EXPECT_EQ(Table::read(dir / "m.svg.missing.tsv").size(), 1u);
  const auto two = choropleth({{"g0", 1.0}, {"g1", 2.0}, {"g2", 1.0}}, b, "x", dir / "t.svg", 5);
  EXPECT_EQ(two.bins, 2);
}

TEST(ClusterSheet, SamplesMembersAndFlagsEmpty) {
  test::TempDir dir("sheet");
  std::vector<int> a = {0, 1, 1, 2, 1, 0, 1, 1};
  auto load = [](std::size_t i) { return noise_image(16, 16, i); };
  const auto s = cluster_sheet(a, load, 1, 3, 9, dir / "s.png");
  EXPECT_EQ(s.cluster_size, 5u);
  EXPECT_EQ(s.members.size(), 3u);
  for (auto m : s.members) EXPECT_EQ(a[m], 1);
  EXPECT_DOUBLE_EQ(s.frequency, 5.0 / 8.0);
  const auto e = cluster_sheet(a, load, 7, 3, 9, dir / "e.png");
  EXPECT_TRUE(e.empty);
  EXPECT_TRUE(std::filesystem::exists(dir / "e.png"));
  const auto again = cluster_sheet(a, load, 1, 3, 9, dir / "s2.png");
  EXPECT_EQ(again.members, s.members);
}
