#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nbhd/geo/survey.hpp"

namespace nbhd::metrics {

// Percent of the 25+ population holding at least a bachelor's degree.
double education_attainment(double bachelors, double masters, double professional,
                            double doctorate, double population_25plus);

// Neighborhood area in m^2 from the count of in-polygon pixels. The image
// resolution is read as pixels per square metre (1/gsd^2), so the area is
// count * gsd^2.
double area_from_mask(std::size_t nonzero_pixel_count, double gsd);

// Persons per square kilometre.
double density(double total_population, double area_m2);

struct CropRef {
  std::string path;
  int width = 0;
  int height = 0;
  double gsd = 0.0;
  std::size_t mask_pixels = 0;
  double nonzero_fraction = 0.0;
};

struct NeighborhoodRecord {
  std::string geoid;
  geo::SurveyRow survey;
  CropRef crop;
  // Derived; valid after derive_metrics().
  double area_m2 = 0.0;
  double density = 0.0;
  double education = 0.0;
};

namespace reason {
inline constexpr const char* kZeroPopulation = "zero_population";
inline constexpr const char* kCensusError = "census_error";
inline constexpr const char* kZeroPopulation25 = "zero_population_25plus";
inline constexpr const char* kDegenerateGeometry = "degenerate_geometry";
}  // namespace reason

struct DroppedRecord {
  NeighborhoodRecord record;
  std::string reason;  // one of the reason:: codes
  std::string detail;
};

struct FilterResult {
  std::vector<NeighborhoodRecord> retained;
  std::vector<DroppedRecord> dropped;
};

// Total: every input lands in exactly one of retained/dropped, order kept.
FilterResult filter_records(std::vector<NeighborhoodRecord> records);

// Fills area, density and education. Requires a record that passed filtering.
void derive_metrics(NeighborhoodRecord& record);

}  // namespace nbhd::metrics
