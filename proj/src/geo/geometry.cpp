#include "nbhd/geo/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "nbhd/core/error.hpp"

namespace nbhd::geo {

void BBox::extend(const Point& p) {
  min_x = std::min(min_x, p.x);
  min_y = std::min(min_y, p.y);
  max_x = std::max(max_x, p.x);
  max_y = std::max(max_y, p.y);
}

void BBox::extend(const BBox& b) {
  if (!b.valid()) return;
  extend(Point{b.min_x, b.min_y});
  extend(Point{b.max_x, b.max_y});
}

namespace {

double signed_ring_area(const Ring& ring) {
  double s = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = ring[i];
    const Point& b = ring[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

bool ring_contains(const Ring& ring, const Point& p) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = ring[i];
    const Point& b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Point& p, const Point& a, const Point& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
  const double d1 = cross(q1, q2, p1);
  const double d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1);
  const double d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

}  // namespace

BBox Polygon::bbox() const {
  BBox b;
  for (const auto& r : rings) {
    for (const auto& p : r) b.extend(p);
  }
  return b;
}

double Polygon::area() const {
  double total = 0.0;
  for (std::size_t i = 0; i < rings.size(); ++i) {
    if (rings[i].empty()) continue;
    int depth = 0;
    for (std::size_t j = 0; j < rings.size(); ++j) {
      if (i != j && !rings[j].empty() && ring_contains(rings[j], rings[i].front())) ++depth;
    }
    const double a = std::abs(signed_ring_area(rings[i]));
    total += (depth % 2 == 0) ? a : -a;
  }
  return total;
}

bool Polygon::contains(const Point& p) const {
  bool inside = false;
  for (const auto& r : rings) {
    if (r.size() >= 3 && ring_contains(r, p)) inside = !inside;
  }
  return inside;
}

std::size_t Polygon::vertex_count() const {
  std::size_t n = 0;
  for (const auto& r : rings) n += r.size();
  return n;
}

std::string normalize_polygon(Polygon& poly) {
  std::string notes;
  std::vector<Ring> kept;
  for (auto& ring : poly.rings) {
    Ring clean;
    for (const auto& p : ring) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        notes += "dropped non-finite vertex;";
        continue;
      }
      if (clean.empty() || !(clean.back() == p)) clean.push_back(p);
    }
    if (clean.size() > 1 && clean.front() == clean.back()) clean.pop_back();
    if (clean.size() < 3 || signed_ring_area(clean) == 0.0) {
      notes += "dropped degenerate ring;";
      continue;
    }
    if (clean.size() != ring.size()) notes += "removed duplicate vertices;";
    kept.push_back(std::move(clean));
  }
  poly.rings = std::move(kept);
  return notes;
}

bool self_intersects(const Polygon& poly) {
  struct Edge {
    Point a, b;
    std::size_t ring, index, ring_size;
  };
  std::vector<Edge> edges;
  for (std::size_t r = 0; r < poly.rings.size(); ++r) {
    const auto& ring = poly.rings[r];
    for (std::size_t i = 0; i < ring.size(); ++i) {
      edges.push_back({ring[i], ring[(i + 1) % ring.size()], r, i, ring.size()});
    }
  }
  // Sort by min-x to prune pairs whose x-extents cannot overlap.
  std::sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) {
    return std::min(l.a.x, l.b.x) < std::min(r.a.x, r.b.x);
  });
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double max_xi = std::max(edges[i].a.x, edges[i].b.x);
    for (std::size_t j = i + 1; j < edges.size(); ++j) {
      if (std::min(edges[j].a.x, edges[j].b.x) > max_xi) break;
      const Edge& e = edges[i];
      const Edge& f = edges[j];
      if (e.ring == f.ring) {
        const std::size_t n = e.ring_size;
        const bool adjacent = (e.index + 1) % n == f.index || (f.index + 1) % n == e.index;
        if (adjacent) continue;
      }
      if (segments_intersect(e.a, e.b, f.a, f.b)) return true;
    }
  }
  return false;
}

double box_overlap_fraction(const Polygon& poly, const BBox& box, int samples) {
  if (samples < 1) throw InputError("box_overlap_fraction needs samples >= 1");
  std::size_t inside = 0;
  const double dx = box.width() / samples;
  const double dy = box.height() / samples;
  for (int i = 0; i < samples; ++i) {
    for (int j = 0; j < samples; ++j) {
      const Point p{box.min_x + (j + 0.5) * dx, box.max_y - (i + 0.5) * dy};
      if (poly.contains(p)) ++inside;
    }
  }
  return static_cast<double>(inside) / (static_cast<double>(samples) * samples);
}

bool is_geographic_epsg(int epsg) { return epsg == 4326 || epsg == 4269; }

bool is_utm_epsg(int epsg) {
  return (epsg >= 32601 && epsg <= 32660) || (epsg >= 32701 && epsg <= 32760) ||
         (epsg >= 26901 && epsg <= 26923);
}

Point lonlat_to_utm(double lon_deg, double lat_deg, int epsg) {
  if (!is_utm_epsg(epsg)) throw CrsMismatchError("EPSG:" + std::to_string(epsg) + " is not UTM");
  int zone = 0;
  bool south = false;
  if (epsg >= 32601 && epsg <= 32660) {
    zone = epsg - 32600;
  } else if (epsg >= 32701 && epsg <= 32760) {
    zone = epsg - 32700;
    south = true;
  } else {
    zone = epsg - 26900;
  }
  // Krueger series to third order in n; sub-millimetre within a zone.
  constexpr double a = 6378137.0;
  constexpr double f = 1.0 / 298.257223563;
  constexpr double k0 = 0.9996;
  const double n = f / (2.0 - f);
  const double n2 = n * n;
  const double n3 = n2 * n;
  const double big_a = a / (1.0 + n) * (1.0 + n2 / 4.0 + n2 * n2 / 64.0);
  const double alpha[3] = {n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0,
                           13.0 * n2 / 48.0 - 3.0 * n3 / 5.0, 61.0 * n3 / 240.0};
  const double deg = M_PI / 180.0;
  const double phi = lat_deg * deg;
  const double dlam = (lon_deg - (zone * 6.0 - 183.0)) * deg;
  const double c = 2.0 * std::sqrt(n) / (1.0 + n);
  const double sphi = std::sin(phi);
  const double t = std::sinh(std::atanh(sphi) - c * std::atanh(c * sphi));
  const double xi = std::atan2(t, std::cos(dlam));
  const double eta = std::atanh(std::sin(dlam) / std::sqrt(1.0 + t * t));
  double e_sum = eta;
  double n_sum = xi;
  for (int j = 1; j <= 3; ++j) {
    e_sum += alpha[j - 1] * std::cos(2.0 * j * xi) * std::sinh(2.0 * j * eta);
    n_sum += alpha[j - 1] * std::sin(2.0 * j * xi) * std::cosh(2.0 * j * eta);
  }
  return {500000.0 + k0 * big_a * e_sum, (south ? 10000000.0 : 0.0) + k0 * big_a * n_sum};
}

Polygon project_polygon(const Polygon& poly, int from_epsg, int to_epsg) {
  if (from_epsg == to_epsg) return poly;
  if (!is_geographic_epsg(from_epsg) || !is_utm_epsg(to_epsg)) {
    throw CrsMismatchError("no reprojection from EPSG:" + std::to_string(from_epsg) +
                           " to EPSG:" + std::to_string(to_epsg));
  }
  Polygon out;
  for (const auto& ring : poly.rings) {
    Ring r;
    r.reserve(ring.size());
    for (const auto& p : ring) r.push_back(lonlat_to_utm(p.x, p.y, to_epsg));
    out.rings.push_back(std::move(r));
  }
  return out;
}

}  // namespace nbhd::geo
