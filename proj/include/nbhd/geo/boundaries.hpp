#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nbhd/geo/geometry.hpp"

namespace nbhd::geo {

struct BoundaryRecord {
  std::string geoid;
  Polygon polygon;
  std::string state_fips;
  std::string county_fips;
};

struct BoundaryRejection {
  std::string geoid;  // may be empty when the feature had no usable id
  std::string reason;
};

struct BoundarySet {
  std::vector<BoundaryRecord> records;  // sorted by geoid, geoids unique
  std::vector<BoundaryRejection> rejections;
  std::vector<std::string> repairs;  // "geoid: what changed"
  int epsg = 0;
};

// Reads GeoJSON (.geojson/.json) or ESRI shapefile (.shp with .dbf, optional
// .prj). The GEOID attribute is required (GEOID, GEOID20 or GEOID10 accepted).
// Self-intersecting polygons and duplicate geoids are rejected, not fatal.
BoundarySet load_boundaries(const std::filesystem::path& path);

BoundarySet parse_geojson_boundaries(const std::string& text, const std::string& source);

void write_geojson_boundaries(const std::filesystem::path& path,
                              const std::vector<BoundaryRecord>& records, int epsg);

// EPSG code guessed from an ESRI .prj WKT string; 0 when unrecognised.
int epsg_from_wkt(const std::string& wkt);

}  // namespace nbhd::geo
