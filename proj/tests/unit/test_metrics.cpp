#include <gtest/gtest.h>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/eval/score.hpp"
#include "nbhd/metrics/census_metrics.hpp"

using namespace nbhd;
using namespace nbhd::metrics;

namespace {

NeighborhoodRecord record(const std::string& id, std::optional<double> pt, std::optional<double> p25,
                          std::optional<double> mhi, std::size_t mask = 100, double gsd = 0.6) {
  NeighborhoodRecord r;
  r.geoid = id;
  r.survey.geoid = id;
  r.survey.total_population = pt;
  r.survey.population_25plus = p25;
  r.survey.median_household_income = mhi;
  r.survey.bachelors = 10;
  r.survey.masters = 5;
  r.survey.professional = 2;
  r.survey.doctorate = 1;
  r.crop.mask_pixels = mask;
  r.crop.gsd = gsd;
  return r;
}

}  // namespace

TEST(Formulas, HandComputedValues) {
  EXPECT_NEAR(education_attainment(120, 60, 15, 5, 800), 25.0, 1e-9);
  EXPECT_NEAR(education_attainment(0, 0, 0, 0, 10), 0.0, 1e-9);
  EXPECT_NEAR(area_from_mask(1'000'000, 0.6), 360'000.0, 1e-9);
  EXPECT_NEAR(area_from_mask(4, 0.5), 1.0, 1e-9);
  EXPECT_NEAR(density(900, 360'000.0), 2500.0, 1e-9);
  // Sparsest neighborhood in the study area: 20 people on 10 km^2.
  EXPECT_NEAR(density(20, 10e6), 2.0, 1e-9);
}

TEST(Formulas, DomainErrors) {
  EXPECT_THROW(education_attainment(1, 0, 0, 0, 0), UndefinedMetricError);
  EXPECT_THROW(education_attainment(-1, 0, 0, 0, 10), InputError);
  EXPECT_THROW(area_from_mask(0, 0.6), DegenerateGeometryError);
  EXPECT_THROW(area_from_mask(10, 0.0), DegenerateGeometryError);
  EXPECT_THROW(density(10, 0.0), DegenerateGeometryError);
}

TEST(Formulas, EducationIsAPercentage) {
  Rng r(4);
  for (int i = 0; i < 1000; ++i) {
    const double p25 = 1 + r.below(5000);
    const double b = r.uniform(0, p25 / 4), m = r.uniform(0, p25 / 4), p = r.uniform(0, p25 / 4),
                 d = r.uniform(0, p25 / 4);
    const double e = education_attainment(b, m, p, d, p25);
    ASSERT_GE(e, 0.0);
    ASSERT_LE(e, 100.0);
    ASSERT_NEAR(e, 100.0 * (b + m + p + d) / p25, 1e-9);
  }
}

TEST(Filter, ReasonsAndTotality) {
  std::vector<NeighborhoodRecord> in = {
      record("ok", 100, 80, 50000),
      record("zero", 0, 0, std::nullopt),
      record("nomhi", 100, 80, std::nullopt),
      record("zero25", 100, 0, 40000),
      record("p25big", 100, 120, 40000),
      record("nopix", 100, 80, 40000, 0),
  };
  const auto res = filter_records(in);
  EXPECT_EQ(res.retained.size() + res.dropped.size(), in.size());
  ASSERT_EQ(res.retained.size(), 1u);
  EXPECT_EQ(res.retained[0].geoid, "ok");
  std::map<std::string, std::string> why;
  for (const auto& d : res.dropped) why[d.record.geoid] = d.reason;
  EXPECT_EQ(why["zero"], reason::kZeroPopulation);
  EXPECT_EQ(why["nomhi"], reason::kCensusError);
  EXPECT_EQ(why["zero25"], reason::kZeroPopulation25);
  EXPECT_EQ(why["p25big"], reason::kCensusError);
  EXPECT_EQ(why["nopix"], reason::kDegenerateGeometry);
}

TEST(Filter, DerivedMetrics) {
  auto res = filter_records({record("a", 180, 80, 61000, 500'000, 0.6)});
  ASSERT_EQ(res.retained.size(), 1u);
  derive_metrics(res.retained[0]);
  EXPECT_NEAR(res.retained[0].area_m2, 180'000.0, 1e-9);
  EXPECT_NEAR(res.retained[0].density, 1000.0, 1e-9);
  EXPECT_NEAR(res.retained[0].education, 100.0 * 18 / 80, 1e-9);
}

TEST(Score, HandComputed) {
  const auto s = eval::score({1, 2, 3, 4}, {1.5, 2, 2, 4});
  EXPECT_NEAR(s.mae, 0.375, 1e-12);
  // ss_res = 0.25 + 0 + 1 + 0, ss_tot = 5
  EXPECT_NEAR(s.r2, 1.0 - 1.25 / 5.0, 1e-12);
  EXPECT_EQ(s.n, 4u);
  const auto z = eval::score({2, 2, 2}, {1, 2, 3});
  EXPECT_TRUE(z.zero_variance);
  EXPECT_EQ(z.r2, 0.0);
  EXPECT_THROW(eval::score({}, {}), InputError);
  EXPECT_THROW(eval::score({1, 2}, {1}), InputError);
}

TEST(Score, MeanPredictorScoresZero) {
  Rng r(2);
  std::vector<double> y(200);
  for (auto& v : y) v = r.normal(10, 3);
  double m = 0;
  for (double v : y) m += v / y.size();
  EXPECT_NEAR(eval::score(y, std::vector<double>(y.size(), m)).r2, 0.0, 1e-12);
  EXPECT_NEAR(eval::score(y, y).r2, 1.0, 1e-12);
}
