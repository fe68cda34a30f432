#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace nbhd::geo {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct BBox {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  bool valid() const { return min_x <= max_x && min_y <= max_y; }
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
  void extend(const Point& p);
  void extend(const BBox& b);
  bool intersects(const BBox& o) const {
    return valid() && o.valid() && min_x < o.max_x && o.min_x < max_x && min_y < o.max_y &&
           o.min_y < max_y;
  }
};

using Ring = std::vector<Point>;  // open ring: last vertex != first

// One or more rings; inside-ness is even-odd over all rings, which covers
// holes and multi-part geometries uniformly.
struct Polygon {
  std::vector<Ring> rings;

  BBox bbox() const;
  // Shoelace area with even-odd semantics approximated by |sum of signed ring
  // areas| per outer ring; exact for simple polygons with holes.
  double area() const;
  bool contains(const Point& p) const;
  std::size_t vertex_count() const;
};

// Removes closing duplicates, consecutive duplicates and rings with fewer than
// three distinct vertices. Returns a description of what changed (empty if
// nothing).
std::string normalize_polygon(Polygon& poly);

// True if any two non-adjacent edges of any rings cross or touch.
bool self_intersects(const Polygon& poly);

// Fraction of an axis-aligned box's area inside the polygon, estimated on a
// `samples` x `samples` lattice of cell centres.
double box_overlap_fraction(const Polygon& poly, const BBox& box, int samples);

// WGS84/NAD83 geographic <-> UTM (north/south by EPSG code). Supports EPSG
// 326xx/327xx (WGS84 UTM) and 269xx (NAD83 UTM); datum shift is ignored.
bool is_geographic_epsg(int epsg);
bool is_utm_epsg(int epsg);
Point lonlat_to_utm(double lon_deg, double lat_deg, int epsg);
Polygon project_polygon(const Polygon& poly, int from_epsg, int to_epsg);

}  // namespace nbhd::geo
