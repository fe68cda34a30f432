#include "nbhd/eval/explain.hpp"

#include <fmt/format.h>

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"
#include "nbhd/crop/crop_engine.hpp"

namespace nbhd::eval {

// ------------------------------------------------------------- tree shapley

namespace {

// Shapley weight of a player that must be present (or absent) for a leaf when
// `with` players must be present and `without` absent in total.
double present_weight(int with, int without) {
  return std::exp(std::lgamma(with) + std::lgamma(without + 1) - std::lgamma(with + without + 1));
}

struct PathWalker {
  const bovw::Tree& tree;
  const std::vector<double>& x;
  const double* z;
  std::vector<signed char>& state;  // 0 free, 1 from x, 2 from z
  std::vector<int>& path;           // features fixed along the current path
  std::vector<double>& phi;

  void walk(int node, int nx, int nz) {
    const bovw::TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
    if (n.leaf()) {
      if (nx + nz == 0) return;
      const double wx = nx > 0 ? present_weight(nx, nz) : 0.0;
      const double wz = nz > 0 ? present_weight(nz, nx) : 0.0;
      for (int f : path) {
        if (state[static_cast<std::size_t>(f)] == 1) {
          phi[static_cast<std::size_t>(f)] += n.value * wx;
        } else {
          phi[static_cast<std::size_t>(f)] -= n.value * wz;
        }
      }
      return;
    }
    const int f = n.feature;
    const int xd = x[static_cast<std::size_t>(f)] <= n.threshold ? n.left : n.right;
    const int zd = z[f] <= n.threshold ? n.left : n.right;
    const signed char s = state[static_cast<std::size_t>(f)];
    if (s == 1) return walk(xd, nx, nz);
    if (s == 2) return walk(zd, nx, nz);
    if (xd == zd) return walk(xd, nx, nz);
    path.push_back(f);
    state[static_cast<std::size_t>(f)] = 1;
    walk(xd, nx + 1, nz);
    state[static_cast<std::size_t>(f)] = 2;
    walk(zd, nx, nz + 1);
    state[static_cast<std::size_t>(f)] = 0;
    path.pop_back();
  }
};

void check_shap_inputs(const bovw::RandomForest& forest, const std::vector<double>& x,
                       const Eigen::MatrixXd& background) {
  if (static_cast<int>(x.size()) != forest.n_features()) {
    throw InputError("attribution: feature vector has " + std::to_string(x.size()) + " entries, forest expects " +
                     std::to_string(forest.n_features()));
  }
  if (background.rows() == 0 || background.cols() != forest.n_features()) {
    throw InputError("attribution: background must be a nonempty matrix with matching columns");
  }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

Attribution tree_shap(const bovw::RandomForest& forest, const std::vector<double>& x,
                      const Eigen::MatrixXd& background) {
  check_shap_inputs(forest, x, background);
  const RowMatrix bg = background;
  const std::size_t d = x.size();
  Attribution a;
  a.values.assign(d, 0.0);
  std::vector<signed char> state(d, 0);
  std::vector<int> path;
  const double scale = 1.0 / (static_cast<double>(forest.trees().size()) * static_cast<double>(bg.rows()));
  std::vector<double> phi(d, 0.0);
  for (const auto& tree : forest.trees()) {
    for (Eigen::Index r = 0; r < bg.rows(); ++r) {
      PathWalker w{tree, x, bg.row(r).data(), state, path, phi};
      w.walk(0, 0, 0);
      a.baseline += tree.predict(bg.row(r).data());
    }
  }
  for (std::size_t j = 0; j < d; ++j) a.values[j] = phi[j] * scale;
  a.baseline *= scale;
  a.prediction = forest.predict_row(x.data());
  return a;
}

Attribution tree_shap_bruteforce(const bovw::RandomForest& forest, const std::vector<double>& x,
                                 const Eigen::MatrixXd& background) {
  check_shap_inputs(forest, x, background);
  const int d = static_cast<int>(x.size());
  if (d > 16) throw InputError("brute-force attribution is limited to 16 features");
  const RowMatrix bg = background;
  // v(S) averaged over the background.
  std::vector<double> v(std::size_t{1} << d, 0.0);
  std::vector<double> mixed(static_cast<std::size_t>(d));
  for (std::size_t s = 0; s < v.size(); ++s) {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < bg.rows(); ++r) {
      for (int j = 0; j < d; ++j) mixed[static_cast<std::size_t>(j)] = (s >> j) & 1 ? x[static_cast<std::size_t>(j)] : bg(r, j);
      acc += forest.predict_row(mixed.data());
    }
    v[s] = acc / static_cast<double>(bg.rows());
  }
  Attribution a;
  a.values.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) {
    for (std::size_t s = 0; s < v.size(); ++s) {
      if ((s >> i) & 1) continue;
      const int size = std::popcount(s);
      const double w = std::exp(std::lgamma(size + 1) + std::lgamma(d - size) - std::lgamma(d + 1));
      a.values[static_cast<std::size_t>(i)] += w * (v[s | (std::size_t{1} << i)] - v[s]);
    }
  }
  a.baseline = v[0];
  a.prediction = v.back();
  return a;
}

// ---------------------------------------------------------------- saliency

std::vector<double> SaliencyMap::pixel_map(int width, int height) const {
  std::vector<double> out(static_cast<std::size_t>(width) * height, 0.0);
  if (grid == 0) return out;
  std::vector<int> count(regions.size(), 0);
  auto region_of = [&](int r, int c) { return (r * grid / height) * grid + (c * grid / width); };
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) ++count[static_cast<std::size_t>(region_of(r, c))];
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const auto g = static_cast<std::size_t>(region_of(r, c));
      out[static_cast<std::size_t>(r) * width + c] = regions[g] / count[g];
    }
  }
  return out;
}

SaliencyMap cnn_saliency(const ImageModel& model, const geo::Raster& image, const SaliencyOptions& options) {
  if (options.grid < 1 || options.grid > 8) throw ConfigError("saliency grid must be in [1, 8]");
  if (options.permutations < 1) throw ConfigError("saliency needs at least one permutation");
  if (image.width() < options.grid || image.height() < options.grid) {
    throw InputError("image is smaller than the saliency grid");
  }
  const int g = options.grid;
  const int n = g * g;
  const std::uint64_t full = n == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1;
  std::unordered_map<std::uint64_t, double> memo;
  SaliencyMap out;
  out.grid = g;
  out.regions.assign(static_cast<std::size_t>(n), 0.0);

  auto value = [&](std::uint64_t visible) {
    auto it = memo.find(visible);
    if (it != memo.end()) return it->second;
    geo::Raster masked = image;
    for (int r = 0; r < image.height(); ++r) {
      const int gr = r * g / image.height();
      for (int c = 0; c < image.width(); ++c) {
        const int reg = gr * g + c * g / image.width();
        if ((visible >> reg) & 1) continue;
        for (auto& v : masked.pixel(r, c)) v = 0;
      }
    }
    const double y = model(masked);
    ++out.evaluations;
    memo.emplace(visible, y);
    return y;
  };

  out.baseline = value(0);
  out.prediction = value(full);
  Rng rng(derive_seed(options.seed, "saliency"));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int walks = 0;
  for (int p = 0; p < options.permutations; ++p) {
    rng.shuffle(order);
    for (int pass = 0; pass < 2; ++pass) {
      std::uint64_t visible = 0;
      double prev = out.baseline;
      for (int i = 0; i < n; ++i) {
        const int reg = order[static_cast<std::size_t>(pass == 0 ? i : n - 1 - i)];
        visible |= std::uint64_t{1} << reg;
        const double cur = value(visible);
        out.regions[static_cast<std::size_t>(reg)] += cur - prev;
        prev = cur;
      }
      ++walks;
    }
  }
  for (auto& v : out.regions) v /= walks;
  return out;
}

geo::Raster saliency_overlay(const geo::Raster& image, const SaliencyMap& map) {
  const auto px = map.pixel_map(image.width(), image.height());
  double peak = 0.0;
  for (double v : px) peak = std::max(peak, std::fabs(v));
  geo::Raster out(image.width(), image.height(), 3);
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      const double v = peak > 0 ? px[static_cast<std::size_t>(r) * image.width() + c] / peak : 0.0;
      const double a = 0.6 * std::fabs(v);
      const std::array<double, 3> tint = v >= 0 ? std::array<double, 3>{230, 30, 30} : std::array<double, 3>{30, 60, 230};
      for (int ch = 0; ch < 3; ++ch) {
        const double base = image.at(r, c, std::min(ch, image.channels() - 1));
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround((1 - a) * base + a * tint[static_cast<std::size_t>(ch)]));
      }
    }
  }
  return out;
}

// ------------------------------------------------------------ resize error

ResizeErrorAnalysis resize_error_analysis(const std::vector<ResizeObservation>& obs, int target_width,
                                          int target_height, int bins) {
  if (bins < 1) throw ConfigError("resize error analysis needs at least one bin");
  ResizeErrorAnalysis a;
  double mean_err = 0.0;
  for (const auto& o : obs) {
    if (o.orig_width <= 0 || o.orig_height <= 0) {
      throw InputError("resize error analysis: original dimensions missing for " + o.geoid +
                       " (rerun preprocess in resizing mode)");
    }
    a.rows.push_back({o.geoid, o.orig_width - target_width, o.orig_height - target_height,
                      std::fabs(o.truth - o.prediction)});
    mean_err += a.rows.back().abs_error;
  }
  if (a.rows.empty()) return a;
  mean_err /= static_cast<double>(a.rows.size());
  a.eps = std::max(1e-12, 1e-3 * mean_err);

  // Log-linear least squares against the mean deviation.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(a.rows.size());
  for (const auto& r : a.rows) {
    const double s = 0.5 * (r.width_dev + r.height_dev);
    const double y = std::log(r.abs_error + a.eps);
    sx += s;
    sy += y;
    sxx += s * s;
    sxy += s * y;
  }
  const double den = n * sxx - sx * sx;
  a.slope = den > 0 ? (n * sxy - sx * sy) / den : 0.0;
  a.intercept = (sy - a.slope * sx) / n;

  int wmin = a.rows[0].width_dev, wmax = wmin, hmin = a.rows[0].height_dev, hmax = hmin;
  for (const auto& r : a.rows) {
    wmin = std::min(wmin, r.width_dev);
    wmax = std::max(wmax, r.width_dev);
    hmin = std::min(hmin, r.height_dev);
    hmax = std::max(hmax, r.height_dev);
  }
  const double wstep = std::max(1.0, static_cast<double>(wmax - wmin + 1) / bins);
  const double hstep = std::max(1.0, static_cast<double>(hmax - hmin + 1) / bins);
  std::vector<ResizeErrorBin> grid(static_cast<std::size_t>(bins) * bins);
  for (const auto& r : a.rows) {
    const int bw = std::min(bins - 1, static_cast<int>((r.width_dev - wmin) / wstep));
    const int bh = std::min(bins - 1, static_cast<int>((r.height_dev - hmin) / hstep));
    auto& b = grid[static_cast<std::size_t>(bh) * bins + bw];
    ++b.count;
    b.mean_abs_error += r.abs_error;
  }
  for (int bh = 0; bh < bins; ++bh) {
    for (int bw = 0; bw < bins; ++bw) {
      auto b = grid[static_cast<std::size_t>(bh) * bins + bw];
      if (b.count == 0) continue;
      b.mean_abs_error /= b.count;
      b.width_lo = wmin + bw * wstep;
      b.width_hi = wmin + (bw + 1) * wstep;
      b.height_lo = hmin + bh * hstep;
      b.height_hi = hmin + (bh + 1) * hstep;
      a.bins.push_back(b);
    }
  }
  return a;
}

namespace {

std::string color_hex(double t) {
  // Five-stop blue-green-yellow ramp.
  static const std::array<std::array<double, 3>, 5> stops = {
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  std::array<int, 3> c{};
  for (int k = 0; k < 3; ++k) {
    c[static_cast<std::size_t>(k)] = static_cast<int>(std::lround(stops[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * (1 - f) +
                                                                  stops[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(k)] * f));
  }
  return fmt::format("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]);
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

void write_resize_error(const std::filesystem::path& dir, const ResizeErrorAnalysis& a) {
  std::filesystem::create_directories(dir);
  Table raw({"geoid", "width_dev", "height_dev", "abs_error"});
  for (const auto& r : a.rows) {
    raw.add_row({r.geoid, std::to_string(r.width_dev), std::to_string(r.height_dev), format_double(r.abs_error)});
  }
  raw.write(dir / "resize_error.tsv");
  Table bins({"width_lo", "width_hi", "height_lo", "height_hi", "count", "mean_abs_error"});
  for (const auto& b : a.bins) {
    bins.add_row({format_double(b.width_lo), format_double(b.width_hi), format_double(b.height_lo),
                  format_double(b.height_hi), std::to_string(b.count), format_double(b.mean_abs_error)});
  }
  bins.write(dir / "resize_error_bins.tsv");
  nlohmann::json j = {{"rows", a.rows.size()}, {"slope", a.slope}, {"intercept", a.intercept}, {"eps", a.eps},
                      {"decay", a.slope < 0}};
  write_file_atomic(dir / "resize_error.json", j.dump(2) + "\n");

  // Left: binned mean error over (width dev, height dev). Right: error against
  // mean deviation with the fitted curve.
  std::ostringstream svg;
  const int w = 900, h = 420, pad = 50, side = 320;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  double emax = 0.0;
  double wlo = 1e300, whi = -1e300, hlo = 1e300, hhi = -1e300;
  for (const auto& b : a.bins) {
    emax = std::max(emax, b.mean_abs_error);
    wlo = std::min(wlo, b.width_lo);
    whi = std::max(whi, b.width_hi);
    hlo = std::min(hlo, b.height_lo);
    hhi = std::max(hhi, b.height_hi);
  }
  for (const auto& b : a.bins) {
    const double x0 = pad + (b.width_lo - wlo) / (whi - wlo) * side;
    const double x1 = pad + (b.width_hi - wlo) / (whi - wlo) * side;
    const double y0 = pad + side - (b.height_hi - hlo) / (hhi - hlo) * side;
    const double y1 = pad + side - (b.height_lo - hlo) / (hhi - hlo) * side;
    svg << fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\"><title>n={} mean={:.4g}</title></rect>\n",
                       x0, y0, x1 - x0, y1 - y0, color_hex(emax > 0 ? b.mean_abs_error / emax : 0.0), b.count,
                       b.mean_abs_error);
  }
  svg << fmt::format("<text x=\"{}\" y=\"{}\">width deviation (px)</text>\n", pad + side / 2 - 50, pad + side + 30);
  svg << fmt::format("<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\">height deviation (px)</text>\n",
                     pad + side / 2 + 50, pad + side / 2 + 50);
  svg << fmt::format("<text x=\"{}\" y=\"30\">mean absolute error by deviation bin (max {:.4g})</text>\n", pad, emax);

  const int ox = 500;
  double smin = 1e300, smax = -1e300, amax = 0.0;
  for (const auto& r : a.rows) {
    const double s = 0.5 * (r.width_dev + r.height_dev);
    smin = std::min(smin, s);
    smax = std::max(smax, s);
    amax = std::max(amax, r.abs_error);
  }
  if (smax <= smin) smax = smin + 1;
  if (amax <= 0) amax = 1;
  svg << fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n", ox, pad, side, side);
  for (const auto& r : a.rows) {
    const double s = 0.5 * (r.width_dev + r.height_dev);
    svg << fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"2\" fill=\"#3b528b\" fill-opacity=\"0.6\"/>\n",
                       ox + (s - smin) / (smax - smin) * side, pad + side - r.abs_error / amax * side);
  }
  std::string pts;
  for (int i = 0; i <= 60; ++i) {
    const double s = smin + (smax - smin) * i / 60.0;
    const double e = std::clamp(std::exp(a.intercept + a.slope * s) - a.eps, 0.0, amax);
    pts += fmt::format("{:.1f},{:.1f} ", ox + (s - smin) / (smax - smin) * side, pad + side - e / amax * side);
  }
  svg << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
  svg << fmt::format("<text x=\"{}\" y=\"{}\">mean deviation (px)</text>\n", ox + side / 2 - 50, pad + side + 30);
  svg << fmt::format("<text x=\"{}\" y=\"30\">abs error; fit log(e) = {:.3g} + {:.3g} s</text>\n", ox, a.intercept, a.slope);
  svg << "</svg>\n";
  write_file_atomic(dir / "resize_error.svg", svg.str());
}

// ---------------------------------------------------------------- 5x7 font

namespace {

const std::array<std::uint8_t, 7>* glyph(char ch) {
  static const std::map<char, std::array<std::uint8_t, 7>> font = {
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
  };
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  auto it = font.find(up);
  return it == font.end() ? nullptr : &it->second;
}

}  // namespace

void draw_text(geo::Raster& img, int x, int y, const std::string& text, int scale,
               const std::array<std::uint8_t, 3>& rgb) {
  int cx = x;
  for (char ch : text) {
    if (const auto* g = glyph(ch)) {
      for (int r = 0; r < 7; ++r) {
        for (int c = 0; c < 5; ++c) {
          if (!(((*g)[static_cast<std::size_t>(r)] >> (4 - c)) & 1)) continue;
          for (int dy = 0; dy < scale; ++dy) {
            for (int dx = 0; dx < scale; ++dx) {
              const int py = y + r * scale + dy, px = cx + c * scale + dx;
              if (py < 0 || px < 0 || py >= img.height() || px >= img.width()) continue;
              for (int ch2 = 0; ch2 < std::min(3, img.channels()); ++ch2) img.at(py, px, ch2) = rgb[static_cast<std::size_t>(ch2)];
            }
          }
        }
      }
    }
    cx += 6 * scale;
  }
}

// ------------------------------------------------------------ cluster sheet

ClusterSheet cluster_sheet(const std::vector<int>& assignments, const PatchLoader& load, int cluster, int n,
                           std::uint64_t seed, const std::filesystem::path& png) {
  ClusterSheet sheet;
  sheet.cluster = cluster;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == cluster) members.push_back(i);
  }
  sheet.cluster_size = members.size();
  sheet.frequency = assignments.empty() ? 0.0 : static_cast<double>(members.size()) / assignments.size();
  Rng rng(derive_seed(seed, "sheet:" + std::to_string(cluster)));
  rng.shuffle(members);
  if (n >= 0 && members.size() > static_cast<std::size_t>(n)) members.resize(static_cast<std::size_t>(n));
  sheet.members = members;
  sheet.empty = members.empty();

  const int cell = crop::kGridCell;
  const int gap = 4;
  const int caption = 24;
  const int cols = sheet.empty ? 4 : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(members.size()))));
  const int rows = sheet.empty ? 1 : static_cast<int>((members.size() + cols - 1) / cols);
  geo::Raster img(gap + cols * (cell + gap), caption + gap + rows * (cell + gap), 3, 255);
  const std::string title = fmt::format("CLUSTER {}  N={}  FREQ {:.2f}%", cluster, sheet.cluster_size, 100.0 * sheet.frequency);
  draw_text(img, gap, 6, title, 2, {20, 20, 20});
  if (sheet.empty) {
    draw_text(img, gap, caption + cell / 2, "EMPTY CLUSTER", 2, {180, 30, 30});
  }
  for (std::size_t i = 0; i < members.size(); ++i) {
    geo::Raster p = load(members[i]);
    if (p.width() != cell || p.height() != cell) p = crop::resize_bilinear(p, cell, cell);
    const int r0 = caption + gap + static_cast<int>(i / cols) * (cell + gap);
    const int c0 = gap + static_cast<int>(i % cols) * (cell + gap);
    for (int r = 0; r < cell; ++r) {
      for (int c = 0; c < cell; ++c) {
        for (int ch = 0; ch < 3; ++ch) img.at(r0 + r, c0 + c, ch) = p.at(r, c, std::min(ch, p.channels() - 1));
      }
    }
  }
  std::filesystem::create_directories(png.parent_path().empty() ? std::filesystem::path(".") : png.parent_path());
  geo::write_png(png, img);
  return sheet;
}

// -------------------------------------------------------------- choropleth

ChoroplethResult choropleth(const std::map<std::string, double>& values,
                            const std::vector<geo::BoundaryRecord>& boundaries, const std::string& variable,
                            const std::filesystem::path& svg_path, int bins) {
  if (bins < 1) throw ConfigError("choropleth needs at least one bin");
  if (values.empty()) throw InputError("choropleth: no values to map");
  ChoroplethResult res;
  std::map<std::string, const geo::Polygon*> poly;
  for (const auto& b : boundaries) poly[b.geoid] = &b.polygon;

  std::vector<double> sorted;
  for (const auto& [g, v] : values) {
    if (!std::isfinite(v)) throw InputError("choropleth: non-finite value for " + g);
    sorted.push_back(v);
  }
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  // One class per distinct value when there are few of them; quantile edges
  // otherwise.
  std::vector<std::pair<double, double>> classes;
  if (static_cast<int>(distinct.size()) <= bins) {
    for (double v : distinct) classes.emplace_back(v, v);
    res.edges = distinct;
  } else {
    std::vector<double> edges;
    for (int i = 0; i <= bins; ++i) {
      const double q = static_cast<double>(i) / bins * (static_cast<double>(sorted.size()) - 1);
      const auto lo = static_cast<std::size_t>(std::floor(q));
      const auto hi = std::min(sorted.size() - 1, lo + 1);
      edges.push_back(sorted[lo] + (q - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]));
    }
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) classes.emplace_back(edges[i], edges[i + 1]);
    res.edges = edges;
  }
  res.bins = static_cast<int>(classes.size());
  auto class_of = [&](double v) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (v <= classes[i].second) return static_cast<int>(i);
    }
    return static_cast<int>(classes.size()) - 1;
  };
  auto class_color = [&](int c) { return color_hex(classes.size() > 1 ? static_cast<double>(c) / (classes.size() - 1) : 0.5); };

  geo::BBox box;
  for (const auto& [g, v] : values) {
    auto it = poly.find(g);
    if (it == poly.end()) {
      res.missing_geometry.push_back(g);
      continue;
    }
    box.extend(it->second->bbox());
  }
  const double map_w = 640.0;
  const double scale = box.valid() && box.width() > 0 ? map_w / std::max(box.width(), box.height()) : 1.0;
  const double map_h = box.valid() ? box.height() * scale : 0.0;
  const int legend_w = 220;
  std::ostringstream svg;
  svg << fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" font-family=\"sans-serif\" font-size=\"12\">\n",
                     map_w + legend_w + 40, std::max(map_h, 30.0 + 22.0 * classes.size()) + 40);
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& [g, v] : values) {
    auto it = poly.find(g);
    if (it == poly.end()) continue;
    std::string d;
    for (const auto& ring : it->second->rings) {
      for (std::size_t i = 0; i < ring.size(); ++i) {
        d += fmt::format("{}{:.2f},{:.2f} ", i == 0 ? "M" : "L", 20 + (ring[i].x - box.min_x) * scale,
                         20 + (box.max_y - ring[i].y) * scale);
      }
      d += "Z ";
    }
    svg << fmt::format("<path d=\"{}\" fill=\"{}\" fill-rule=\"evenodd\" stroke=\"#444\" stroke-width=\"0.3\"><title>{} {:.6g}</title></path>\n",
                       d, class_color(class_of(v)), svg_escape(g), v);
    ++res.drawn;
  }
  const double lx = map_w + 40;
  svg << fmt::format("<text x=\"{:.0f}\" y=\"30\" font-weight=\"bold\">{}</text>\n", lx, svg_escape(variable));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const double y = 42 + 22.0 * i;
    const std::string label = classes[i].first == classes[i].second
                                  ? fmt::format("{:.4g}", classes[i].first)
                                  : fmt::format("{:.4g} - {:.4g}", classes[i].first, classes[i].second);
    svg << fmt::format("<rect x=\"{:.0f}\" y=\"{:.0f}\" width=\"18\" height=\"16\" fill=\"{}\" stroke=\"#444\"/>\n", lx, y,
                       class_color(static_cast<int>(i)));
    svg << fmt::format("<text x=\"{:.0f}\" y=\"{:.0f}\">{}</text>\n", lx + 26, y + 12, label);
  }
  svg << "</svg>\n";
  if (!svg_path.parent_path().empty()) std::filesystem::create_directories(svg_path.parent_path());
  write_file_atomic(svg_path, svg.str());
  Table missing({"geoid", "reason"});
  for (const auto& g : res.missing_geometry) missing.add_row({g, "no_geometry"});
  missing.write(svg_path.string() + ".missing.tsv");
  return res;
}

}  // namespace nbhd::eval
