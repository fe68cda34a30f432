#include "nbhd/crop/crop_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"

namespace nbhd::crop {

std::size_t patch_candidate_count(int width, int height, int size) {
  if (width < 1 || height < 1 || size < 1) throw InputError("patch dimensions must be positive");
  const std::size_t cols = (static_cast<std::size_t>(width) + size - 1) / size;
  const std::size_t rows = (static_cast<std::size_t>(height) + size - 1) / size;
  return cols * rows;
}

std::vector<Patch> patchify(const geo::Raster& crop, const std::string& geoid, int size,
                            double keep_threshold) {
  if (crop.empty()) throw InputError(geoid + ": cannot patchify an empty crop");
  if (size < 1) throw InputError("patch size must be positive");
  const int cols = (crop.width() + size - 1) / size;
  const int rows = (crop.height() + size - 1) / size;
  const double area = static_cast<double>(size) * size;
  std::vector<Patch> out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      std::size_t nonzero = 0;
      const int r1 = std::min(crop.height(), (r + 1) * size);
      const int c1 = std::min(crop.width(), (c + 1) * size);
      for (int y = r * size; y < r1; ++y) {
        for (int x = c * size; x < c1; ++x) nonzero += crop.nonzero(y, x) ? 1 : 0;
      }
      const double frac = static_cast<double>(nonzero) / area;
      if (frac > keep_threshold) {
        out.push_back({geoid, crop.window(r * size, c * size, size, size), r, c, frac});
      }
    }
  }
  return out;
}

geo::Raster resize_bilinear(const geo::Raster& src, int out_width, int out_height) {
  if (src.empty()) throw InputError("cannot resize an empty image");
  if (out_width < 1 || out_height < 1) throw InputError("resize target must be positive");
  const int sw = src.width();
  const int sh = src.height();
  const int ch = src.channels();
  geo::Raster out(out_width, out_height, ch);

  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int n_out, int n_src) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    const double scale = static_cast<double>(n_src) / n_out;
    for (int i = 0; i < n_out; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n_src - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, n_src - 1);
      t[static_cast<std::size_t>(i)] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto tx = taps(out_width, sw);
  const auto ty = taps(out_height, sh);

  for (int y = 0; y < out_height; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_width; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < ch; ++c) {
        const double top = src.at(a.i0, b.i0, c) * (1.0 - b.w1) + src.at(a.i0, b.i1, c) * b.w1;
        const double bot = src.at(a.i1, b.i0, c) * (1.0 - b.w1) + src.at(a.i1, b.i1, c) * b.w1;
        const double v = top * (1.0 - a.w1) + bot * a.w1;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

ResizedImage resize_to_median(const geo::Raster& crop, const std::string& geoid, int width,
                              int height) {
  if (crop.empty()) throw InputError(geoid + ": cannot resize an empty crop");
  return {geoid, resize_bilinear(crop, width, height), crop.width(), crop.height()};
}

std::vector<std::size_t> weighted_sample_without_replacement(const std::vector<double>& weights,
                                                             std::size_t m, Rng& rng) {
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
      throw InputError("sampling weights must be positive and finite");
    }
    // log(u)/w: the largest keys form a successive proportional draw.
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    keys.emplace_back(std::log(u) / weights[i], i);
  }
  m = std::min(m, keys.size());
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(m), keys.end(),
                    [](const auto& l, const auto& r) {
                      return l.first != r.first ? l.first > r.first : l.second < r.second;
                    });
  std::vector<std::size_t> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(keys[i].second);
  return out;
}

geo::GeoTransform grid_transform(const geo::TileIndex& tiles) {
  if (tiles.size() == 0) throw InputError("no tiles");
  double ox = std::numeric_limits<double>::infinity();
  double oy = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    ox = std::min(ox, tiles.info(i).transform.origin_x);
    oy = std::max(oy, tiles.info(i).transform.origin_y);
  }
  return {ox, oy, tiles.gsd()};
}

std::vector<GridCell> grid_candidates(const geo::TileIndex& tiles,
                                      const std::vector<geo::BoundaryRecord>& boundaries,
                                      const GridOptions& options) {
  if (options.cell < 1) throw InputError("grid cell size must be positive");
  const geo::GeoTransform g = grid_transform(tiles);
  const int cell = options.cell;
  const double cell_area = static_cast<double>(cell) * cell;

  std::vector<geo::BBox> extents;
  for (std::size_t i = 0; i < tiles.size(); ++i) extents.push_back(tiles.extent(i));

  std::vector<GridCell> out;
  for (const auto& rec : boundaries) {
    const geo::BBox box = rec.polygon.bbox();
    if (!box.valid()) continue;
    const int c0 = std::max(0, static_cast<int>(std::floor(g.col_of_x(box.min_x) / cell)));
    const int c1 = static_cast<int>(std::floor(g.col_of_x(box.max_x) / cell));
    const int r0 = std::max(0, static_cast<int>(std::floor(g.row_of_y(box.max_y) / cell)));
    const int r1 = static_cast<int>(std::floor(g.row_of_y(box.min_y) / cell));
    if (c1 < c0 || r1 < r0) continue;
    const int wc = c1 - c0 + 1;
    const int hc = r1 - r0 + 1;
    const geo::GeoTransform win{g.x_of_col(static_cast<double>(c0) * cell),
                                g.y_of_row(static_cast<double>(r0) * cell), g.pixel_size};
    const auto mask = geo::rasterize_mask(rec.polygon, win, wc * cell, hc * cell);
    for (int rr = 0; rr < hc; ++rr) {
      for (int cc = 0; cc < wc; ++cc) {
        std::size_t inside = 0;
        for (int y = rr * cell; y < (rr + 1) * cell; ++y) {
          const std::size_t base = static_cast<std::size_t>(y) * (wc * cell);
          for (int x = cc * cell; x < (cc + 1) * cell; ++x) inside += mask[base + x];
        }
        if (inside == 0) continue;
        geo::BBox cb;
        cb.extend(geo::Point{win.x_of_col(cc * cell), win.y_of_row(rr * cell)});
        cb.extend(geo::Point{win.x_of_col((cc + 1) * cell), win.y_of_row((rr + 1) * cell)});
        const bool covered = std::any_of(extents.begin(), extents.end(),
                                         [&](const geo::BBox& e) { return e.intersects(cb); });
        if (!covered) continue;
        out.push_back({rec.geoid, r0 + rr, c0 + cc, static_cast<double>(inside) / cell_area});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const GridCell& a, const GridCell& b) {
    if (a.geoid != b.geoid) return a.geoid < b.geoid;
    if (a.grid_row != b.grid_row) return a.grid_row < b.grid_row;
    return a.grid_col < b.grid_col;
  });
  return out;
}

std::vector<GridCell> cap_candidates(std::vector<GridCell> candidates, int max_per_hood,
                                     std::uint64_t seed) {
  if (max_per_hood < 1) throw InputError("max_per_hood must be >= 1");
  std::sort(candidates.begin(), candidates.end(), [](const GridCell& a, const GridCell& b) {
    if (a.geoid != b.geoid) return a.geoid < b.geoid;
    if (a.grid_row != b.grid_row) return a.grid_row < b.grid_row;
    return a.grid_col < b.grid_col;
  });
  std::vector<GridCell> out;
  std::size_t i = 0;
  while (i < candidates.size()) {
    std::size_t j = i;
    while (j < candidates.size() && candidates[j].geoid == candidates[i].geoid) ++j;
    const std::size_t n = j - i;
    if (n <= static_cast<std::size_t>(max_per_hood)) {
      out.insert(out.end(), candidates.begin() + static_cast<std::ptrdiff_t>(i),
                 candidates.begin() + static_cast<std::ptrdiff_t>(j));
    } else {
      std::vector<double> w(n);
      for (std::size_t k = 0; k < n; ++k) w[k] = candidates[i + k].overlap_fraction;
      Rng rng(derive_seed(seed, "grid_sample:" + candidates[i].geoid));
      auto pick = weighted_sample_without_replacement(w, static_cast<std::size_t>(max_per_hood), rng);
      std::sort(pick.begin(), pick.end());
      for (auto k : pick) out.push_back(candidates[i + k]);
    }
    i = j;
  }
  return out;
}

std::vector<GridCell> grid_sample(const geo::TileIndex& tiles,
                                  const std::vector<geo::BoundaryRecord>& boundaries,
                                  const GridOptions& options, std::uint64_t seed) {
  return cap_candidates(grid_candidates(tiles, boundaries, options), options.max_per_hood, seed);
}

geo::Raster read_window(const geo::TileIndex& tiles, const geo::GeoTransform& window, int width,
                        int height, int channels) {
  geo::Raster out(width, height, channels);
  geo::BBox wb;
  wb.extend(geo::Point{window.origin_x, window.origin_y});
  wb.extend(geo::Point{window.x_of_col(width), window.y_of_row(height)});
  std::vector<std::uint8_t> filled(static_cast<std::size_t>(width) * height, 0);
  for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
    if (!tiles.extent(ti).intersects(wb)) continue;
    auto tile = tiles.load(ti);
    const auto& t = tile->transform;
    const auto& img = tile->image;
    const int nc = std::min(channels, img.channels());
    for (int row = 0; row < height; ++row) {
      const double trow = std::floor(t.row_of_y(window.y_of_row(row + 0.5)));
      if (trow < 0 || trow >= img.height()) continue;
      for (int col = 0; col < width; ++col) {
        const std::size_t idx = static_cast<std::size_t>(row) * width + col;
        if (filled[idx]) continue;
        const double tcol = std::floor(t.col_of_x(window.x_of_col(col + 0.5)));
        if (tcol < 0 || tcol >= img.width()) continue;
        const auto src = img.pixel(static_cast<int>(trow), static_cast<int>(tcol));
        auto dst = out.pixel(row, col);
        for (int c = 0; c < nc; ++c) dst[static_cast<std::size_t>(c)] = src[static_cast<std::size_t>(c)];
        filled[idx] = 1;
      }
    }
  }
  return out;
}

geo::Raster read_grid_cell(const geo::TileIndex& tiles, const GridCell& cell, int size,
                           int channels) {
  const geo::GeoTransform g = grid_transform(tiles);
  const geo::GeoTransform win{g.x_of_col(static_cast<double>(cell.grid_col) * size),
                              g.y_of_row(static_cast<double>(cell.grid_row) * size), g.pixel_size};
  return read_window(tiles, win, size, size, channels);
}

}  // namespace nbhd::crop
