#include "nbhd/dataset/synthetic.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"

namespace nbhd::dataset {

namespace {

using Rgb = std::array<int, 3>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Canvas {
  geo::Raster& img;
  void put(int r, int c, const Rgb& v, int jitter, Rng& rng) {
    if (r < 0 || c < 0 || r >= img.height() || c >= img.width()) return;
    const int j = jitter > 0 ? static_cast<int>(rng.below(2 * jitter + 1)) - jitter : 0;
    for (int k = 0; k < 3; ++k) img.at(r, c, k) = static_cast<std::uint8_t>(std::clamp(v[k] + j, 1, 255));
  }
  void rect(int r0, int c0, int h, int w, const Rgb& v, int jitter, Rng& rng) {
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) put(r, c, v, jitter, rng);
    }
  }
};

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {static_cast<int>(std::lround(a[0] * (1 - t) + b[0] * t)),
          static_cast<int>(std::lround(a[1] * (1 - t) + b[1] * t)),
          static_cast<int>(std::lround(a[2] * (1 - t) + b[2] * t))};
}

std::string make_geoid(const SyntheticSpec& spec, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d%d", 100000 + (i / 9) * 100, i % 9 + 1);
  return spec.state_fips + spec.county_fips + buf;
}

}  // namespace

SyntheticCity generate_synthetic_city(const SyntheticSpec& spec) {
  if (spec.n_hoods < 1) throw ConfigError("synthetic n_hoods must be >= 1");
  if (spec.min_side_px < 32 || spec.max_side_px < spec.min_side_px) {
    throw ConfigError("synthetic side range must satisfy 32 <= min_side_px <= max_side_px");
  }
  if (!(spec.gsd > 0.0)) throw ConfigError("synthetic gsd must be positive");
  if (spec.tile_size < 64) throw ConfigError("synthetic tile_size must be >= 64");
  if (!(spec.density_min > 0.0) || spec.density_max < spec.density_min) {
    throw ConfigError("synthetic density range must satisfy 0 < density_min <= density_max");
  }
  if (spec.state_fips.size() != 2 || spec.county_fips.size() != 3) {
    throw ConfigError("synthetic state/county FIPS must have 2/3 digits");
  }

  Rng layout_rng(derive_seed(spec.seed, "layout"));
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.n_hoods))));
  const int rows = (spec.n_hoods + cols - 1) / cols;
  std::vector<int> col_w(static_cast<std::size_t>(cols));
  std::vector<int> row_h(static_cast<std::size_t>(rows));
  for (auto& w : col_w) w = static_cast<int>(layout_rng.range(spec.min_side_px, spec.max_side_px));
  for (auto& h : row_h) h = static_cast<int>(layout_rng.range(spec.min_side_px, spec.max_side_px));
  std::vector<int> col_x(static_cast<std::size_t>(cols) + 1, 0);
  std::vector<int> row_y(static_cast<std::size_t>(rows) + 1, 0);
  for (int c = 0; c < cols; ++c) col_x[c + 1] = col_x[c] + col_w[c];
  for (int r = 0; r < rows; ++r) row_y[r + 1] = row_y[r] + row_h[r];
  const int width = col_x.back();
  const int height = row_y.back();

  geo::Raster canvas(width, height, 3);
  Canvas cv{canvas};
  {
    // Farmland where no neighborhood is drawn.
    Rng rng(derive_seed(spec.seed, "farmland"));
    cv.rect(0, 0, height, width, {122, 128, 84}, 10, rng);
  }

  const Rgb grass{72, 112, 52};
  const Rgb soil{156, 140, 104};
  const Rgb asphalt{88, 88, 94};
  const Rgb tree{38, 74, 34};
  const Rgb pool{60, 150, 200};
  const std::array<Rgb, 4> roofs = {Rgb{150, 150, 152}, Rgb{142, 72, 58}, Rgb{196, 176, 142},
                                    Rgb{72, 72, 80}};

  SyntheticCity city;
  for (int i = 0; i < spec.n_hoods; ++i) {
    const int gr = i / cols;
    const int gc = i % cols;
    const int x0 = col_x[gc];
    const int y0 = row_y[gr];
    const int w = col_w[gc];
    const int h = row_h[gr];
    const std::string geoid = make_geoid(spec, i);
    Rng rng(derive_seed(spec.seed, "hood:" + geoid));

    SyntheticTruth t;
    t.geoid = geoid;
    t.width_px = w;
    t.height_px = h;
    t.area_m2 = static_cast<double>(w) * h * spec.gsd * spec.gsd;
    t.affluence = rng.normal();
    const bool park = rng.uniform() < spec.zero_population_share;
    if (!spec.density_levels.empty()) {
      t.target_density = spec.density_levels[static_cast<std::size_t>(i) % spec.density_levels.size()];
    } else if (spec.fixed_density >= 0.0) {
      t.target_density = spec.fixed_density;
    } else if (park) {
      t.target_density = 0.0;
    } else {
      t.target_density = std::exp(rng.uniform(std::log(spec.density_min), std::log(spec.density_max)));
    }

    // Ground and vegetation.
    const double green = sigmoid(1.3 * t.affluence + 0.3 * rng.normal() + (t.target_density == 0.0 ? 2.0 : 0.0));
    const Rgb ground = mix(soil, grass, green);
    for (int r = y0; r < y0 + h; ++r) {
      for (int c = x0; c < x0 + w; ++c) cv.put(r, c, ground, 9, rng);
    }
    const int n_trees = static_cast<int>(std::lround(green * w * h / 700.0));
    for (int k = 0; k < n_trees; ++k) {
      const int rad = static_cast<int>(rng.range(4, 9));
      const int cr = y0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
      const int cc = x0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
      for (int dr = -rad; dr <= rad; ++dr) {
        for (int dc = -rad; dc <= rad; ++dc) {
          const int r = cr + dr;
          const int c = cc + dc;
          if (dr * dr + dc * dc > rad * rad || r < y0 || r >= y0 + h || c < x0 || c >= x0 + w) continue;
          cv.put(r, c, tree, 12, rng);
        }
      }
    }

    // Streets along the neighborhood edge.
    const int street = 5;
    cv.rect(y0, x0, street, w, asphalt, 6, rng);
    cv.rect(y0 + h - street, x0, street, w, asphalt, 6, rng);
    cv.rect(y0, x0, h, street, asphalt, 6, rng);
    cv.rect(y0, x0 + w - street, h, street, asphalt, 6, rng);

    // Buildings on a lot grid.
    const double side_m = std::clamp(spec.building_side_m + spec.building_side_per_affluence * t.affluence +
                                         rng.normal(),
                                     5.0, 26.0);
    const int side_px = std::max(4, static_cast<int>(std::lround(side_m / spec.gsd)));
    const int lot = static_cast<int>(std::ceil(side_px * 1.7)) + 2;
    const int inner_x = x0 + street + 2;
    const int inner_y = y0 + street + 2;
    const int lots_x = std::max(0, (w - 2 * street - 4) / lot);
    const int lots_y = std::max(0, (h - 2 * street - 4) / lot);
    const double roof_m2 = spec.roof_fraction_per_density * t.target_density * t.area_m2;
    const int wanted = static_cast<int>(std::lround(roof_m2 / (side_m * side_m)));
    std::vector<int> lots(static_cast<std::size_t>(lots_x) * lots_y);
    for (std::size_t k = 0; k < lots.size(); ++k) lots[k] = static_cast<int>(k);
    rng.shuffle(lots);
    t.buildings = std::min<int>(wanted, static_cast<int>(lots.size()));
    for (int k = 0; k < t.buildings; ++k) {
      const int lr = lots[static_cast<std::size_t>(k)] / lots_x;
      const int lc = lots[static_cast<std::size_t>(k)] % lots_x;
      const int bw = std::max(3, static_cast<int>(std::lround(side_px * rng.uniform(0.85, 1.15))));
      const int bh = std::max(3, static_cast<int>(std::lround(side_px * rng.uniform(0.85, 1.15))));
      // Roof plus its 2 px shadow stays inside the lot.
      const int by = inner_y + lr * lot + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, lot - bh - 1))));
      const int bx = inner_x + lc * lot + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, lot - bw - 1))));
      const Rgb roof = roofs[rng.below(roofs.size())];
      // Shadow to the south-east, then a two-tone gabled roof.
      cv.rect(by + 2, bx + 2, bh, bw, {34, 34, 38}, 3, rng);
      cv.rect(by, bx, bh, bw / 2, mix(roof, {255, 255, 255}, 0.12), 5, rng);
      cv.rect(by, bx + bw / 2, bh, bw - bw / 2, roof, 5, rng);
      t.roof_pixels += static_cast<std::size_t>(bw) * bh;
      if (t.affluence > 0.8 && rng.uniform() < 0.5) {
        const int ps = std::max(3, side_px / 3);
        const int py = std::min(by + bh + 3, inner_y + (lr + 1) * lot - ps);
        cv.rect(py, bx, ps, ps + ps / 2, pool, 6, rng);
      }
    }

    // Survey estimates.
    geo::SurveyRow row;
    row.geoid = geoid;
    row.year = spec.year;
    const double pt = std::round(t.target_density * t.area_m2 / 1e6);
    row.total_population = pt;
    t.density = 1e6 * pt / t.area_m2;
    const double p25 = std::round(pt * rng.uniform(0.62, 0.76));
    row.population_25plus = p25;
    const double edu = sigmoid(-0.4 + 0.9 * t.affluence + spec.noise * rng.normal());
    const double degrees = std::floor(p25 * edu);
    const double b = std::floor(degrees * 0.60);
    const double m = std::floor(degrees * 0.27);
    const double p = std::floor(degrees * 0.06);
    row.bachelors = b;
    row.masters = m;
    row.professional = p;
    row.doctorate = degrees - b - m - p;
    const double mhi = std::exp(11.1 + 0.42 * t.affluence + 0.42 * spec.noise * rng.normal());
    if (pt > 0 && rng.uniform() >= spec.missing_income_share) {
      row.median_household_income = std::clamp(std::round(mhi), 2499.0, 250001.0);
    }

    geo::BoundaryRecord rec;
    rec.geoid = geoid;
    rec.state_fips = spec.state_fips;
    rec.county_fips = spec.county_fips;
    const double mx0 = spec.origin_x + x0 * spec.gsd;
    const double mx1 = spec.origin_x + (x0 + w) * spec.gsd;
    const double my0 = spec.origin_y - y0 * spec.gsd;
    const double my1 = spec.origin_y - (y0 + h) * spec.gsd;
    rec.polygon.rings.push_back({{mx0, my0}, {mx1, my0}, {mx1, my1}, {mx0, my1}});

    city.boundaries.push_back(std::move(rec));
    city.survey.push_back(std::move(row));
    city.truth.push_back(t);
  }

  const int tiles_x = (width + spec.tile_size - 1) / spec.tile_size;
  const int tiles_y = (height + spec.tile_size - 1) / spec.tile_size;
  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      geo::GeoRaster tile;
      const int r0 = ty * spec.tile_size;
      const int c0 = tx * spec.tile_size;
      tile.image = canvas.window(r0, c0, std::min(spec.tile_size, height - r0),
                                 std::min(spec.tile_size, width - c0));
      tile.transform = {spec.origin_x + c0 * spec.gsd, spec.origin_y - r0 * spec.gsd, spec.gsd};
      tile.epsg = spec.epsg;
      // The easternmost column comes from an older flight.
      tile.year = (tx == tiles_x - 1 && tiles_x > 1) ? spec.year - 2 : spec.year;
      city.tiles.push_back(std::move(tile));
    }
  }
  spdlog::info("synthetic city hoods={} canvas={}x{} tiles={}", spec.n_hoods, width, height,
               city.tiles.size());
  return city;
}

SyntheticPaths write_synthetic_city(const SyntheticCity& city, const std::filesystem::path& dir) {
  SyntheticPaths p;
  p.tiles_dir = dir / "tiles";
  p.boundaries = dir / "boundaries.geojson";
  p.survey_fixture = dir / "survey.json";
  p.truth = dir / "truth.tsv";
  std::filesystem::create_directories(p.tiles_dir);
  for (std::size_t i = 0; i < city.tiles.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "tile_%03zu.tif", i);
    geo::write_geotiff(p.tiles_dir / name, city.tiles[i]);
  }
  const int epsg = city.tiles.empty() ? 0 : city.tiles.front().epsg;
  geo::write_geojson_boundaries(p.boundaries, city.boundaries, epsg);
  write_file_atomic(p.survey_fixture, geo::render_survey_response(city.survey, geo::SurveyVariables{}));
  Table t({"geoid", "target_density", "density", "area_m2", "affluence", "buildings", "roof_pixels",
           "width_px", "height_px"});
  for (const auto& s : city.truth) {
    t.add_row({s.geoid, format_double(s.target_density), format_double(s.density),
               format_double(s.area_m2), format_double(s.affluence), std::to_string(s.buildings),
               std::to_string(s.roof_pixels), std::to_string(s.width_px), std::to_string(s.height_px)});
  }
  t.write(p.truth);
  return p;
}

}  // namespace nbhd::dataset
