#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nbhd/geo/boundaries.hpp"
#include "nbhd/geo/raster.hpp"
#include "nbhd/geo/survey.hpp"

namespace nbhd::dataset {

// Parameters of a synthetic city: a jittered grid of rectangular block groups
// drawn onto aerial-looking tiles. Density drives how much of a neighborhood
// is roofed; a latent affluence score drives building size, vegetation, income
// and education.
struct SyntheticSpec {
  int n_hoods = 500;
  std::uint64_t seed = 7;

  double gsd = 0.6;
  int epsg = 32610;
  double origin_x = 590000.0;
  double origin_y = 4140000.0;
  int tile_size = 2240;  // pixels; a multiple of the grid cell keeps the grid tile-aligned

  int min_side_px = 192;  // neighborhood width/height range
  int max_side_px = 480;

  // Density is log-uniform on [density_min, density_max] persons/km^2.
  double density_min = 150.0;
  double density_max = 12000.0;
  // Constant density for every neighborhood when >= 0 (test fixtures).
  double fixed_density = -1.0;
  // Optional per-neighborhood densities, cycled; overrides the above.
  std::vector<double> density_levels;
  // Roofed share of the ground per person per km^2; 1/45000 roofs ~27% at 12,000.
  double roof_fraction_per_density = 1.0 / 45000.0;
  double zero_population_share = 0.02;  // parks
  double missing_income_share = 0.01;   // suppressed estimates

  double building_side_m = 10.0;  // mean roof side at affluence 0
  double building_side_per_affluence = 3.0;
  double noise = 0.25;  // label noise (latent units)

  std::string state_fips = "06";
  std::string county_fips = "085";
  int year = 2021;
};

// Ground truth per neighborhood as generated (before any pipeline stage).
struct SyntheticTruth {
  std::string geoid;
  double target_density = 0.0;
  double area_m2 = 0.0;       // polygon area
  double density = 0.0;       // realised: 1e6 * P_t / area
  double affluence = 0.0;
  int buildings = 0;
  std::size_t roof_pixels = 0;
  int width_px = 0;
  int height_px = 0;
};

struct SyntheticCity {
  std::vector<geo::GeoRaster> tiles;  // row-major tile order
  std::vector<geo::BoundaryRecord> boundaries;
  std::vector<geo::SurveyRow> survey;
  std::vector<SyntheticTruth> truth;
};

SyntheticCity generate_synthetic_city(const SyntheticSpec& spec);

struct SyntheticPaths {
  std::filesystem::path tiles_dir;
  std::filesystem::path boundaries;
  std::filesystem::path survey_fixture;
  std::filesystem::path truth;
};

// Writes tiles as GeoTIFF, boundaries as GeoJSON, survey rows as an API-shaped
// JSON fixture and truth as TSV, all under `dir`.
SyntheticPaths write_synthetic_city(const SyntheticCity& city, const std::filesystem::path& dir);

}  // namespace nbhd::dataset
