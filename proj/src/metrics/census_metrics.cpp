#include "nbhd/metrics/census_metrics.hpp"

#include <cmath>

#include "nbhd/core/error.hpp"

namespace nbhd::metrics {

double education_attainment(double bachelors, double masters, double professional,
                            double doctorate, double population_25plus) {
  if (bachelors < 0 || masters < 0 || professional < 0 || doctorate < 0 || population_25plus < 0) {
    throw InputError("education counts must be nonnegative");
  }
  if (population_25plus == 0.0) {
    throw UndefinedMetricError("educational attainment undefined for zero population over 25");
  }
  return (bachelors + masters + professional + doctorate) / population_25plus * 100.0;
}

double area_from_mask(std::size_t nonzero_pixel_count, double gsd) {
  if (!(gsd > 0.0)) throw DegenerateGeometryError("ground sample distance must be positive");
  if (nonzero_pixel_count == 0) throw DegenerateGeometryError("neighborhood has no pixels");
  return static_cast<double>(nonzero_pixel_count) * gsd * gsd;
}

double density(double total_population, double area_m2) {
  if (!(area_m2 > 0.0)) throw DegenerateGeometryError("area must be positive");
  return 1e6 * total_population / area_m2;
}

FilterResult filter_records(std::vector<NeighborhoodRecord> records) {
  FilterResult out;
  for (auto& r : records) {
    const auto& s = r.survey;
    std::string reason;
    std::string detail;
    if (s.total_population && *s.total_population == 0.0) {
      reason = reason::kZeroPopulation;
    } else if (!s.total_population || !s.population_25plus || !s.median_household_income ||
               !s.bachelors || !s.masters || !s.professional || !s.doctorate) {
      reason = reason::kCensusError;
      detail = "missing required survey field";
    } else if (*s.population_25plus == 0.0) {
      reason = reason::kZeroPopulation25;
    } else if (auto v = s.invariant_violation(); !v.empty()) {
      reason = reason::kCensusError;
      detail = v;
    } else if (r.crop.mask_pixels == 0 || !(r.crop.gsd > 0.0)) {
      reason = reason::kDegenerateGeometry;
    }
    if (reason.empty()) {
      out.retained.push_back(std::move(r));
    } else {
      out.dropped.push_back({std::move(r), reason, detail});
    }
  }
  return out;
}

void derive_metrics(NeighborhoodRecord& record) {
  const auto& s = record.survey;
  record.area_m2 = area_from_mask(record.crop.mask_pixels, record.crop.gsd);
  record.density = density(s.total_population.value(), record.area_m2);
  record.education = education_attainment(s.bachelors.value(), s.masters.value(),
                                          s.professional.value(), s.doctorate.value(),
                                          s.population_25plus.value());
}

}  // namespace nbhd::metrics
