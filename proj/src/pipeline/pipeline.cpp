#include "nbhd/pipeline/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <fmt/format.h>

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <map>
#include <set>

#include "nbhd/bovw/cluster.hpp"
#include "nbhd/bovw/features.hpp"
#include "nbhd/bovw/forest.hpp"
#include "nbhd/bovw/search.hpp"
#include "nbhd/core/error.hpp"
#include "nbhd/core/rng.hpp"
#include "nbhd/core/table.hpp"
#include "nbhd/crop/crop_engine.hpp"
#include "nbhd/dataset/dataset.hpp"
#include "nbhd/dataset/synthetic.hpp"
#include "nbhd/eval/explain.hpp"
#include "nbhd/eval/score.hpp"
#include "nbhd/geo/boundaries.hpp"
#include "nbhd/geo/crop.hpp"
#include "nbhd/geo/survey.hpp"
#include "nbhd/metrics/census_metrics.hpp"
#include "nbhd/supervised/backbone.hpp"
#include "nbhd/supervised/regressor.hpp"

namespace fs = std::filesystem;

namespace nbhd::pipeline {

using json = nlohmann::json;
using supervised::Target;

const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order = {"ingest",        "metrics",       "preprocess", "split",
                                                 "train-supervised", "train-semisup", "evaluate",   "explain",
                                                 "map"};
  return order;
}

bool is_stage(const std::string& name) {
  if (name == "all" || name == "synth" || name == "make-backbone") return true;
  for (const auto& s : stage_order()) {
    if (s == name) return true;
  }
  return false;
}

namespace {

// ------------------------------------------------------------ small helpers

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> opt_num(const std::string& s, const std::string& field) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, field);
}

std::vector<fs::path> list_tiles(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw InputError("tile directory " + dir.string() + " does not exist (run `nbhd synth` for synthetic data)");
  }
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".tif" || ext == ".tiff" || ext == ".TIF")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw EmptyInputError("no GeoTIFF tiles in " + dir.string());
  return out;
}

Target target_of(const std::string& s) { return supervised::parse_target(s); }

std::vector<std::string> filter(const std::vector<std::string>& all, const std::vector<std::string>& only) {
  if (only.empty()) return all;
  std::vector<std::string> out;
  for (const auto& a : all) {
    if (std::find(only.begin(), only.end(), a) != only.end()) out.push_back(a);
  }
  for (const auto& o : only) {
    if (std::find(all.begin(), all.end(), o) == all.end()) {
      // Requested explicitly even though the config leaves it out.
      out.push_back(o);
    }
  }
  return out;
}

struct LabelRow {
  std::string geoid;
  std::string crop_path;
  int width = 0;
  int height = 0;
  double density = 0.0;
  double mhi = 0.0;
  double education = 0.0;
};

std::map<std::string, LabelRow> read_labels(const fs::path& path) {
  const Table t = Table::read(path);
  std::map<std::string, LabelRow> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    LabelRow r;
    r.geoid = t.at(i, "geoid");
    r.crop_path = t.at(i, "crop_path");
    r.width = static_cast<int>(parse_int(t.at(i, "width"), "width"));
    r.height = static_cast<int>(parse_int(t.at(i, "height"), "height"));
    r.density = t.number(i, "density");
    r.mhi = t.number(i, "mhi");
    r.education = t.number(i, "education");
    out[r.geoid] = r;
  }
  return out;
}

dataset::DatasetItem item_from_label(const LabelRow& l) {
  dataset::DatasetItem it;
  it.item_id = l.geoid;
  it.geoid = l.geoid;
  it.density = l.density;
  it.mhi = l.mhi;
  it.education = l.education;
  return it;
}

geo::Raster load_crop(const std::string& path, int channels) {
  geo::Raster img = geo::read_geotiff(path).image;
  if (img.channels() > channels) img = img.first_channels(channels);
  if (img.channels() < channels) {
    throw InputError(path + " has " + std::to_string(img.channels()) + " bands, the model expects " +
                     std::to_string(channels));
  }
  return img;
}

// Stored images per mode: resizing keeps a pointer to the crop and resizes on
// read, patching stores the patch, grid reads the cell from the tiles.
supervised::ImageLoader make_loader(const std::string& mode, const PipelineConfig& cfg, int channels) {
  if (mode == "resizing") {
    const int w = cfg.preprocess.resize_width, h = cfg.preprocess.resize_height;
    return [w, h, channels](const dataset::DatasetItem& it) {
      return crop::resize_bilinear(load_crop(it.path, channels), w, h);
    };
  }
  if (mode == "patching") {
    return [channels](const dataset::DatasetItem& it) {
      geo::Raster img = geo::read_tiff(it.path);
      if (img.channels() > channels) img = img.first_channels(channels);
      return img;
    };
  }
  throw InternalError("no image loader for mode " + mode);
}

std::vector<const dataset::DatasetItem*> with_split(const dataset::DatasetManifest& m, const std::string& split) {
  return m.subset(split);
}

void write_predictions(const fs::path& path, const std::vector<supervised::Prediction>& preds,
                       const std::map<std::string, std::pair<std::string, std::string>>& dims = {}) {
  std::vector<std::string> header = {"item_id", "geoid", "split", "truth", "prediction"};
  if (!dims.empty()) {
    header.push_back("orig_width");
    header.push_back("orig_height");
  }
  Table t(header);
  for (const auto& p : preds) {
    std::vector<std::string> row = {p.item_id, p.geoid, p.split, format_double(p.truth), format_double(p.prediction)};
    if (!dims.empty()) {
      auto it = dims.find(p.item_id);
      row.push_back(it == dims.end() ? "" : it->second.first);
      row.push_back(it == dims.end() ? "" : it->second.second);
    }
    t.add_row(row);
  }
  t.write(path);
}

void write_hood_predictions(const fs::path& path, const std::vector<supervised::HoodPrediction>& preds) {
  Table t({"geoid", "split", "truth", "prediction", "items"});
  for (const auto& p : preds) {
    t.add_row({p.geoid, p.split, format_double(p.truth), format_double(p.prediction), std::to_string(p.items)});
  }
  t.write(path);
}

struct HoodPred {
  std::string geoid, split;
  double truth = 0.0, prediction = 0.0;
};

std::vector<HoodPred> read_hood_predictions(const fs::path& path) {
  const Table t = Table::read(path);
  std::vector<HoodPred> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    out.push_back({t.at(i, "geoid"), t.at(i, "split"), t.number(i, "truth"), t.number(i, "prediction")});
  }
  return out;
}

eval::Score score_split(const std::vector<HoodPred>& preds, const std::string& split) {
  std::vector<double> y, p;
  for (const auto& r : preds) {
    if (r.split == split) {
      y.push_back(r.truth);
      p.push_back(r.prediction);
    }
  }
  if (y.empty()) throw EmptyInputError("no " + split + " predictions to score");
  return eval::score(y, p);
}

supervised::RegressorConfig regressor_config(const PipelineConfig& cfg, const std::string& mode,
                                             const std::string& target) {
  supervised::RegressorConfig rc;
  rc.target = target_of(target);
  rc.mode = supervised::parse_mode(mode);
  rc.batch_size = cfg.supervised.batch_size;
  rc.lr = cfg.supervised.lr;
  rc.weight_decay = cfg.supervised.weight_decay;
  rc.patience = cfg.supervised.patience;
  rc.max_epochs = cfg.supervised.max_epochs;
  rc.head_widths = cfg.supervised.head_widths;
  rc.dropout = cfg.supervised.dropout;
  rc.dropout_layers = cfg.supervised.dropout_layers;
  rc.standardize_labels = cfg.supervised.standardize_labels;
  rc.in_channels = cfg.supervised.in_channels;
  rc.seed = derive_seed(cfg.seed, "supervised:" + mode + ":" + target);
  rc.backbone_path = cfg.paths.backbone;
  return rc;
}

nn::Tensor gather(const bovw::FeatureStore& store, const std::map<std::string, std::size_t>& row_of,
                  const std::vector<const dataset::DatasetItem*>& items) {
  const int d = store.x.shape.at(1);
  nn::Tensor x({static_cast<int>(items.size()), d});
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto it = row_of.find(items[i]->item_id);
    if (it == row_of.end()) throw InternalError("no cached feature for " + items[i]->item_id);
    std::copy(store.x.row(static_cast<int>(it->second)), store.x.row(static_cast<int>(it->second)) + d,
              x.row(static_cast<int>(i)));
  }
  return x;
}

bovw::ForestGrid forest_grid(const ForestConfig& f) {
  bovw::ForestGrid g;
  g.n_trees = f.n_trees;
  g.max_depth = f.max_depth;
  g.min_leaf = f.min_leaf;
  return g;
}

void write_matrix_store(const fs::path& path, const std::vector<std::string>& ids, const Eigen::MatrixXd& x) {
  bovw::FeatureStore s;
  s.item_ids = ids;
  s.geoids = ids;
  s.x = bovw::to_tensor(x);
  s.save(path);
}

std::string timestamp_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace

// ------------------------------------------------------------------ driver

Pipeline::Pipeline(PipelineConfig config, RunOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
}

const fs::path& Pipeline::run_dir() {
  if (!run_dir_.empty()) return run_dir_;
  const std::string hash = config_.hash();
  if (!options_.run_dir.empty()) {
    run_dir_ = options_.run_dir;
  } else {
    const fs::path root = config_.paths.output_root;
    if (fs::is_directory(root)) {
      std::vector<fs::path> matches;
      for (const auto& e : fs::directory_iterator(root)) {
        const std::string name = e.path().filename().string();
        if (e.is_directory() && name.size() > hash.size() && name.ends_with("-" + hash)) matches.push_back(e.path());
      }
      std::sort(matches.begin(), matches.end());
      if (!matches.empty()) run_dir_ = matches.back();
    }
    if (run_dir_.empty()) run_dir_ = root / (timestamp_now() + "-" + hash);
  }
  fs::create_directories(run_dir_ / "stages");
  const fs::path snap = run_dir_ / "config.resolved.yaml";
  if (!fs::exists(snap)) write_file_atomic(snap, config_.to_yaml());
  spdlog::info("event=run_dir path={} config_hash={}", run_dir_.string(), hash);
  return run_dir_;
}

std::string Pipeline::marker(const std::string& stage) const {
  std::string m = stage;
  if (stage == "train-semisup") {
    for (const auto& t : options_.targets) m += "." + t;
    for (const auto& x : options_.methods) m += "." + x;
    if (!options_.grid_file.empty()) m += ".grid-" + fmt::format("{:08x}", fnv1a64(read_file(options_.grid_file)) & 0xffffffffULL);
  }
  return m + ".done";
}

bool Pipeline::begin(const std::string& stage) {
  const fs::path m = run_dir() / "stages" / marker(stage);
  if (fs::exists(m) && !options_.force) {
    spdlog::info("stage={} event=skipped reason=outputs_exist", stage);
    return false;
  }
  spdlog::info("stage={} event=start", stage);
  return true;
}

void Pipeline::finish(const std::string& stage) {
  write_file_atomic(run_dir() / "stages" / marker(stage), json{{"stage", stage}, {"config_hash", config_.hash()}}.dump() + "\n");
  executed_.push_back(stage);
  spdlog::info("stage={} event=done", stage);
}

fs::path Pipeline::require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) {
    throw MissingArtifactError(p.string() + " is missing; run `nbhd " + stage + "` first");
  }
  return p;
}

void Pipeline::run(const std::string& stage) {
  if (stage == "synth") return synth();
  if (stage == "make-backbone") return make_backbone();
  if (stage == "ingest") return ingest();
  if (stage == "metrics") return metrics();
  if (stage == "preprocess") return preprocess();
  if (stage == "split") return split();
  if (stage == "train-supervised") return train_supervised();
  if (stage == "train-semisup") return train_semisup();
  if (stage == "evaluate") return evaluate();
  if (stage == "explain") return explain();
  if (stage == "map") return map();
  if (stage == "all") return all();
  throw ConfigError("unknown stage '" + stage + "'");
}

void Pipeline::all() {
  for (const auto& s : stage_order()) run(s);
}

// ------------------------------------------------------------------- synth

void Pipeline::synth() {
  const fs::path root = config_.paths.data_root;
  const bool have_data = fs::exists(root / "truth.tsv") && fs::exists(config_.paths.boundaries);
  if (have_data && !options_.force) {
    spdlog::info("stage=synth event=skipped reason=outputs_exist dir={}", root.string());
  } else {
    dataset::SyntheticSpec spec;
    const auto& s = config_.synth;
    spec.n_hoods = s.n_hoods;
    spec.seed = derive_seed(config_.seed, "synth");
    spec.tile_size = s.tile_size;
    spec.min_side_px = s.min_side_px;
    spec.max_side_px = s.max_side_px;
    spec.density_min = s.density_min;
    spec.density_max = s.density_max;
    spec.roof_fraction_per_density = s.roof_fraction_per_density;
    spec.zero_population_share = s.zero_population_share;
    spec.missing_income_share = s.missing_income_share;
    spec.building_side_m = s.building_side_m;
    spec.building_side_per_affluence = s.building_side_per_affluence;
    spec.noise = s.noise;
    spec.state_fips = config_.survey.state;
    spec.county_fips = config_.survey.county;
    spec.year = config_.survey.year;
    spdlog::info("stage=synth event=start n_hoods={} dir={}", spec.n_hoods, root.string());
    const auto city = dataset::generate_synthetic_city(spec);
    if (options_.force && fs::exists(root / "tiles")) fs::remove_all(root / "tiles");
    const auto paths = dataset::write_synthetic_city(city, root);
    spdlog::info("stage=synth event=done tiles={} hoods={} survey_fixture={}", city.tiles.size(),
                 city.boundaries.size(), paths.survey_fixture.string());
    executed_.push_back("synth");
  }
  if (!fs::exists(config_.paths.backbone)) make_backbone();
}

void Pipeline::make_backbone() {
  const fs::path p = config_.paths.backbone;
  if (fs::exists(p) && !options_.force) {
    spdlog::info("stage=make-backbone event=skipped reason=outputs_exist path={}", p.string());
    return;
  }
  if (!p.parent_path().empty()) fs::create_directories(p.parent_path());
  nn::save_blob_file(p, supervised::make_backbone_weights(derive_seed(config_.seed, "backbone")));
  spdlog::info("stage=make-backbone event=done path={}", p.string());
  executed_.push_back("make-backbone");
}

// ------------------------------------------------------------------ ingest

void Pipeline::ingest() {
  if (!begin("ingest")) return;
  const fs::path out = run_dir() / "ingest";
  fs::create_directories(out / "crops");

  geo::TileIndex tiles(list_tiles(config_.paths.tiles));
  if (!fs::exists(config_.paths.boundaries)) {
    throw InputError("boundary file " + config_.paths.boundaries + " does not exist");
  }
  const geo::BoundarySet bounds = geo::load_boundaries(config_.paths.boundaries);
  geo::CropOptions copt;
  copt.keep_ir = config_.ingest.keep_ir;
  const geo::CropResult crops = geo::pair_and_crop(tiles, bounds, copt);

  Table manifest({"geoid", "crop_path", "width", "height", "gsd", "epsg", "mask_pixels", "nonzero_fraction", "year",
                  "multi_year"});
  for (const auto& c : crops.crops) {
    const fs::path p = out / "crops" / (c.geoid + ".tif");
    geo::GeoRaster gr;
    gr.image = c.pixels;
    gr.transform = c.transform;
    gr.epsg = c.epsg;
    gr.year = c.dominant_year;
    geo::write_geotiff(p, gr);
    manifest.add_row({c.geoid, p.string(), std::to_string(c.pixels.width()), std::to_string(c.pixels.height()),
                      format_double(c.gsd()), std::to_string(c.epsg), std::to_string(c.mask_pixels),
                      format_double(c.nonzero_fraction), std::to_string(c.dominant_year), c.multi_year ? "1" : "0"});
  }
  manifest.write(out / "ingest_manifest.tsv");

  Table gaps({"geoid", "reason"});
  for (const auto& g : crops.gaps) gaps.add_row({g.geoid, g.reason});
  gaps.write(out / "coverage_gaps.tsv");
  Table rej({"geoid", "reason"});
  for (const auto& r : bounds.rejections) rej.add_row({r.geoid, r.reason});
  rej.write(out / "boundary_rejections.tsv");

  geo::SurveyClientOptions sopt;
  sopt.endpoint = config_.survey.endpoint;
  sopt.dataset = config_.survey.dataset;
  sopt.max_attempts = config_.survey.max_attempts;
  sopt.timeout_s = config_.survey.timeout_s;
  if (!config_.survey.fixture.empty()) sopt.fixture = config_.survey.fixture;
  if (const char* key = std::getenv(config_.survey.api_key_env.c_str())) sopt.api_key = key;
  const auto rows = geo::fetch_survey(config_.survey.state, config_.survey.county, config_.survey.year, sopt);
  Table survey({"geoid", "total_population", "population_25plus", "median_household_income", "bachelors", "masters",
                "professional", "doctorate", "year"});
  for (const auto& r : rows) {
    survey.add_row({r.geoid, opt_str(r.total_population), opt_str(r.population_25plus),
                    opt_str(r.median_household_income), opt_str(r.bachelors), opt_str(r.masters),
                    opt_str(r.professional), opt_str(r.doctorate), std::to_string(r.year)});
  }
  survey.sort_by("geoid");
  survey.write(out / "survey.tsv");
  spdlog::info("stage=ingest crops={} gaps={} rejected_boundaries={} survey_rows={}", crops.crops.size(),
               crops.gaps.size(), bounds.rejections.size(), rows.size());
  finish("ingest");
}

// ----------------------------------------------------------------- metrics

void Pipeline::metrics() {
  if (!begin("metrics")) return;
  const fs::path in = run_dir() / "ingest";
  const Table manifest = Table::read(require(in / "ingest_manifest.tsv", "ingest"));
  const Table survey = Table::read(require(in / "survey.tsv", "ingest"));
  std::map<std::string, geo::SurveyRow> by_geoid;
  for (std::size_t i = 0; i < survey.size(); ++i) {
    geo::SurveyRow r;
    r.geoid = survey.at(i, "geoid");
    r.total_population = opt_num(survey.at(i, "total_population"), "total_population");
    r.population_25plus = opt_num(survey.at(i, "population_25plus"), "population_25plus");
    r.median_household_income = opt_num(survey.at(i, "median_household_income"), "median_household_income");
    r.bachelors = opt_num(survey.at(i, "bachelors"), "bachelors");
    r.masters = opt_num(survey.at(i, "masters"), "masters");
    r.professional = opt_num(survey.at(i, "professional"), "professional");
    r.doctorate = opt_num(survey.at(i, "doctorate"), "doctorate");
    r.year = static_cast<int>(parse_int(survey.at(i, "year"), "year"));
    by_geoid[r.geoid] = r;
  }
  std::vector<metrics::NeighborhoodRecord> records;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    metrics::NeighborhoodRecord rec;
    rec.geoid = manifest.at(i, "geoid");
    auto it = by_geoid.find(rec.geoid);
    if (it != by_geoid.end()) rec.survey = it->second;
    rec.survey.geoid = rec.geoid;
    rec.crop.path = manifest.at(i, "crop_path");
    rec.crop.width = static_cast<int>(parse_int(manifest.at(i, "width"), "width"));
    rec.crop.height = static_cast<int>(parse_int(manifest.at(i, "height"), "height"));
    rec.crop.gsd = manifest.number(i, "gsd");
    rec.crop.mask_pixels = static_cast<std::size_t>(parse_int(manifest.at(i, "mask_pixels"), "mask_pixels"));
    rec.crop.nonzero_fraction = manifest.number(i, "nonzero_fraction");
    records.push_back(std::move(rec));
  }
  auto result = metrics::filter_records(std::move(records));
  const fs::path out = run_dir() / "metrics";
  fs::create_directories(out);
  Table labels({"geoid", "crop_path", "width", "height", "gsd", "mask_pixels", "area_m2", "total_population",
                "density", "mhi", "education"});
  for (auto& r : result.retained) {
    metrics::derive_metrics(r);
    labels.add_row({r.geoid, r.crop.path, std::to_string(r.crop.width), std::to_string(r.crop.height),
                    format_double(r.crop.gsd), std::to_string(r.crop.mask_pixels), format_double(r.area_m2),
                    format_double(*r.survey.total_population), format_double(r.density),
                    format_double(*r.survey.median_household_income), format_double(r.education)});
  }
  labels.write(out / "labels.tsv");
  Table drops({"geoid", "reason", "detail"});
  for (const auto& d : result.dropped) drops.add_row({d.record.geoid, d.reason, d.detail});
  drops.write(out / "drops.tsv");
  spdlog::info("stage=metrics retained={} dropped={}", result.retained.size(), result.dropped.size());
  if (result.retained.empty()) throw EmptyInputError("no neighborhood survived metric filtering; see " + (out / "drops.tsv").string());
  finish("metrics");
}

// -------------------------------------------------------------- preprocess

void Pipeline::preprocess() {
  if (!begin("preprocess")) return;
  const auto labels = read_labels(require(run_dir() / "metrics" / "labels.tsv", "metrics"));
  const fs::path out = run_dir() / "preprocess";
  const auto& pc = config_.preprocess;
  for (const auto& mode : pc.modes) {
    fs::create_directories(out / mode);
    dataset::DatasetManifest m;
    m.mode = mode;
    m.seed = config_.seed;
    if (mode == "resizing") {
      for (const auto& [g, l] : labels) {
        auto it = item_from_label(l);
        it.path = l.crop_path;
        it.extra["orig_width"] = std::to_string(l.width);
        it.extra["orig_height"] = std::to_string(l.height);
        m.items.push_back(std::move(it));
      }
    } else if (mode == "patching") {
      fs::create_directories(out / mode / "patches");
      for (const auto& [g, l] : labels) {
        const geo::Raster crop = geo::read_geotiff(l.crop_path).image;
        for (const auto& p : crop::patchify(crop, g, pc.patch_size, pc.keep_threshold)) {
          auto it = item_from_label(l);
          it.item_id = fmt::format("{}_p{:02d}_{:02d}", g, p.grid_row, p.grid_col);
          it.path = (out / mode / "patches" / (it.item_id + ".tif")).string();
          geo::write_tiff(it.path, p.pixels);
          it.extra["grid_row"] = std::to_string(p.grid_row);
          it.extra["grid_col"] = std::to_string(p.grid_col);
          it.extra["nonzero_fraction"] = format_double(p.nonzero_fraction);
          m.items.push_back(std::move(it));
        }
      }
    } else {
      geo::TileIndex tiles(list_tiles(config_.paths.tiles));
      const geo::BoundarySet bounds = geo::load_boundaries(config_.paths.boundaries);
      std::vector<geo::BoundaryRecord> wanted;
      for (const auto& b : bounds.records) {
        if (labels.count(b.geoid)) wanted.push_back(b);
      }
      crop::GridOptions go;
      go.cell = pc.grid_cell;
      go.max_per_hood = pc.max_per_hood;
      for (const auto& c : crop::grid_sample(tiles, wanted, go, derive_seed(config_.seed, "grid"))) {
        auto it = item_from_label(labels.at(c.geoid));
        it.item_id = fmt::format("{}_g{}_{}", c.geoid, c.grid_row, c.grid_col);
        it.extra["grid_row"] = std::to_string(c.grid_row);
        it.extra["grid_col"] = std::to_string(c.grid_col);
        it.extra["overlap_fraction"] = format_double(c.overlap_fraction);
        m.items.push_back(std::move(it));
      }
    }
    std::sort(m.items.begin(), m.items.end(),
              [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
    m.write(out / mode / "manifest.tsv");
    spdlog::info("stage=preprocess mode={} items={}", mode, m.items.size());
  }
  finish("preprocess");
}

// ------------------------------------------------------------------- split

void Pipeline::split() {
  if (!begin("split")) return;
  const auto labels = read_labels(require(run_dir() / "metrics" / "labels.tsv", "metrics"));
  const fs::path out = run_dir() / "split";
  fs::create_directories(out);
  std::vector<dataset::DatasetItem> hoods;
  for (const auto& [g, l] : labels) hoods.push_back(item_from_label(l));
  const auto group = dataset::parse_group_by(config_.split.group_by);
  const dataset::DatasetManifest hood_split =
      dataset::split(hoods, config_.split.fractions, config_.seed, dataset::GroupBy::neighborhood, "neighborhood");
  hood_split.write(out / "hoods.tsv");
  std::map<std::string, std::string> split_of;
  for (const auto& it : hood_split.items) split_of[it.geoid] = it.split;

  for (const auto& mode : config_.preprocess.modes) {
    auto m = dataset::DatasetManifest::read(require(run_dir() / "preprocess" / mode / "manifest.tsv", "preprocess"));
    if (group == dataset::GroupBy::neighborhood) {
      // Every mode inherits the neighborhood split, so a geoid sits in the
      // same split across modes.
      for (auto& it : m.items) it.split = split_of.at(it.geoid);
      m.seed = config_.seed;
    } else {
      m = dataset::split(m.items, config_.split.fractions, derive_seed(config_.seed, "split:" + mode), group, mode);
    }
    m.write(out / (mode + ".tsv"));
    std::map<std::string, int> counts;
    for (const auto& it : m.items) ++counts[it.split];
    spdlog::info("stage=split mode={} train={} val={} test={}", mode, counts["train"], counts["val"], counts["test"]);
  }
  finish("split");
}

// -------------------------------------------------------- train-supervised

void Pipeline::train_supervised() {
  if (!begin("train-supervised")) return;
  const auto& sc = config_.supervised;
  for (const auto& mode : sc.modes) {
    const fs::path manifest_path = run_dir() / "split" / (mode + ".tsv");
    if (std::find(config_.preprocess.modes.begin(), config_.preprocess.modes.end(), mode) ==
        config_.preprocess.modes.end()) {
      throw ConfigError("supervised mode " + mode + " is not among preprocess.modes");
    }
    const auto manifest = dataset::DatasetManifest::read(require(manifest_path, "split"));
    const auto train_items = with_split(manifest, "train");
    const auto val_items = with_split(manifest, "val");
    std::vector<const dataset::DatasetItem*> all_items;
    for (const auto& it : manifest.items) all_items.push_back(&it);
    if (train_items.empty() || val_items.empty()) {
      throw EmptyInputError("mode " + mode + " has no train or validation items");
    }
    const fs::path mdir = run_dir() / "supervised" / mode;
    fs::create_directories(mdir);
    const auto loader = make_loader(mode, config_, sc.in_channels);

    // The frozen backbone's features are shared by every target.
    bovw::FeatureStore cache;
    std::map<std::string, std::size_t> row_of;
    if (mode == "resizing") {
      const fs::path fpath = mdir / "features.bin";
      if (fs::exists(fpath) && !options_.force) {
        cache = bovw::FeatureStore::load(fpath);
      } else {
        auto bb = supervised::Backbone::load(config_.paths.backbone, sc.in_channels);
        cache.x = nn::Tensor({static_cast<int>(all_items.size()), supervised::kFeatureDim});
        for (std::size_t i = 0; i < all_items.size(); ++i) {
          const geo::Raster img = loader(*all_items[i]);
          const nn::Tensor f = bb.features({&img});
          std::copy(f.data.begin(), f.data.end(), cache.x.row(static_cast<int>(i)));
          cache.item_ids.push_back(all_items[i]->item_id);
          cache.geoids.push_back(all_items[i]->geoid);
        }
        cache.save(fpath);
      }
      for (std::size_t i = 0; i < cache.size(); ++i) row_of[cache.item_ids[i]] = i;
    }

    for (const auto& target : sc.targets) {
      const auto rc = regressor_config(config_, mode, target);
      auto model = supervised::build_model(rc);
      const fs::path tdir = mdir / target;
      fs::create_directories(tdir);
      supervised::TrainOptions topt;
      topt.log_path = tdir / "train_log.tsv";
      if (fs::exists(topt.log_path)) fs::remove(topt.log_path);
      supervised::Checkpoint ck;
      std::vector<supervised::Prediction> preds;
      if (mode == "resizing") {
        std::vector<double> ty, vy;
        for (auto* it : train_items) ty.push_back(supervised::label_of(*it, rc.target));
        for (auto* it : val_items) vy.push_back(supervised::label_of(*it, rc.target));
        ck = supervised::train_head(model, gather(cache, row_of, train_items), ty, gather(cache, row_of, val_items), vy,
                                    topt);
        const nn::Tensor p = model.predict_features(gather(cache, row_of, all_items));
        for (std::size_t i = 0; i < all_items.size(); ++i) {
          preds.push_back({all_items[i]->item_id, all_items[i]->geoid, all_items[i]->split,
                           supervised::label_of(*all_items[i], rc.target), static_cast<double>(p.data[i])});
        }
      } else {
        ck = supervised::train(model, train_items, val_items, loader, topt);
        preds = supervised::predict(model, all_items, loader);
      }
      supervised::save_checkpoint(tdir / "model.ckpt", model, ck);
      std::map<std::string, std::pair<std::string, std::string>> dims;
      if (mode == "resizing") {
        for (const auto& it : manifest.items) dims[it.item_id] = {it.extra.at("orig_width"), it.extra.at("orig_height")};
      }
      write_predictions(tdir / "predictions.tsv", preds, dims);
      write_hood_predictions(tdir / "hood_predictions.tsv", supervised::aggregate_by_neighborhood(preds));
      spdlog::info("stage=train-supervised mode={} target={} best_epoch={} epochs={} best_val_l1={:.6g}", mode, target,
                   ck.best_epoch, ck.epochs_run, ck.best_val_loss);
    }
  }
  finish("train-supervised");
}

// ----------------------------------------------------------- train-semisup

void Pipeline::train_semisup() {
  if (!begin("train-semisup")) return;
  SemisupConfig sc = config_.semisup;
  if (!options_.grid_file.empty()) apply_grid_file(sc, options_.grid_file);
  const auto manifest = dataset::DatasetManifest::read(require(run_dir() / "split" / "grid.tsv", "split"));
  const auto hood_manifest = dataset::DatasetManifest::read(require(run_dir() / "split" / "hoods.tsv", "split"));
  const fs::path out = run_dir() / "semisup";
  fs::create_directories(out);

  const fs::path fpath = out / "grid_features.bin";
  bovw::FeatureStore store;
  if (fs::exists(fpath) && !options_.force) {
    store = bovw::FeatureStore::load(fpath);
  } else {
    geo::TileIndex tiles(list_tiles(config_.paths.tiles));
    auto bb = supervised::Backbone::load(config_.paths.backbone, 3);
    store.x = nn::Tensor({static_cast<int>(manifest.items.size()), supervised::kFeatureDim});
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
      const auto& it = manifest.items[i];
      crop::GridCell cell;
      cell.geoid = it.geoid;
      cell.grid_row = static_cast<int>(parse_int(it.extra.at("grid_row"), "grid_row"));
      cell.grid_col = static_cast<int>(parse_int(it.extra.at("grid_col"), "grid_col"));
      const geo::Raster img = crop::read_grid_cell(tiles, cell, config_.preprocess.grid_cell, 3);
      const nn::Tensor f = bovw::extract_features(bb, {&img}, config_.preprocess.grid_cell);
      std::copy(f.data.begin(), f.data.end(), store.x.row(static_cast<int>(i)));
      store.item_ids.push_back(it.item_id);
      store.geoids.push_back(it.geoid);
    }
    store.save(fpath);
  }

  bovw::SearchData data;
  data.patches = store;
  for (const auto& it : hood_manifest.items) data.hoods[it.geoid] = it;
  data.patch_split = bovw::patch_splits(store, data.hoods);

  bovw::SearchOptions so;
  so.d_z = sc.d_z;
  so.k = sc.k;
  so.dec_extra_k = sc.dec_extra_k;
  so.modes.clear();
  for (const auto& m : sc.modes) so.modes.push_back(bovw::parse_feature_mode(m));
  so.methods.clear();
  for (const auto& m : filter(sc.methods, options_.methods)) so.methods.push_back(bovw::parse_cluster_method(m));
  so.targets.clear();
  for (const auto& t : filter(sc.targets, options_.targets)) so.targets.push_back(target_of(t));
  so.autoencoder.hidden = sc.autoencoder.hidden;
  so.autoencoder.lr = sc.autoencoder.lr;
  so.autoencoder.weight_decay = sc.autoencoder.weight_decay;
  so.autoencoder.batch_size = sc.autoencoder.batch_size;
  so.autoencoder.max_epochs = sc.autoencoder.max_epochs;
  so.autoencoder.patience = sc.autoencoder.patience;
  so.dec.lambda = sc.dec.lambda;
  so.dec.lr = sc.dec.lr;
  so.dec.batch_size = sc.dec.batch_size;
  so.dec.max_epochs = sc.dec.max_epochs;
  so.dec.patience = sc.dec.patience;
  so.dec.plateau_tol = sc.dec.plateau_tol;
  so.dec.collapse_epochs = sc.dec.collapse_epochs;
  so.dec.train_decoder = sc.dec.train_decoder;
  so.kmeans.max_iter = sc.kmeans_max_iter;
  so.kmeans.n_init = sc.kmeans_n_init;
  so.forest = forest_grid(sc.forest);
  so.min_aggregation = sc.min_aggregation;
  so.seed = derive_seed(config_.seed, "semisup");

  const bovw::SearchResult res = bovw::hyperparameter_search(data, so);
  std::string lb_name = "leaderboard.tsv";
  if (!options_.targets.empty() || !options_.methods.empty()) {
    lb_name = "leaderboard";
    for (const auto& t : options_.targets) lb_name += "." + t;
    for (const auto& m : options_.methods) lb_name += "." + m;
    lb_name += ".tsv";
  }
  bovw::write_leaderboard(out / lb_name, res.leaderboard);

  for (const auto& w : res.winners) {
    const fs::path wdir = out / supervised::to_string(w.target) / bovw::to_string(w.method);
    fs::create_directories(wdir);
    w.cluster->save(wdir / "cluster_model.bin");
    w.forest.save(wdir / "forest.bin");
    write_matrix_store(wdir / "hood_features.bin", w.features.geoids, w.features.x);
    Table preds({"geoid", "split", "truth", "prediction"});
    for (const auto& r : w.results) {
      preds.add_row({r.geoid, r.split, format_double(r.truth), format_double(r.prediction)});
    }
    preds.write(wdir / "hood_predictions.tsv");
    // Patch assignments under the winning model.
    const auto assign = w.cluster->assign(store.x);
    Table at({"item_id", "geoid", "split", "cluster"});
    for (std::size_t i = 0; i < store.size(); ++i) {
      at.add_row({store.item_ids[i], store.geoids[i], data.patch_split[i], std::to_string(assign[i])});
    }
    at.write(wdir / "assignments.tsv");
    json j = {{"target", w.row.target}, {"method", w.row.method}, {"d_z", w.row.d_z}, {"k", w.row.k},
              {"mode", w.row.mode}, {"forest", w.row.forest}, {"val_r2", w.row.val_r2}, {"val_mae", w.row.val_mae},
              {"min_aggregation", sc.min_aggregation}, {"note", w.row.note}};
    write_file_atomic(wdir / "winner.json", j.dump(2) + "\n");
    spdlog::info("stage=train-semisup target={} method={} d_z={} k={} mode={} val_r2={:.4f}", w.row.target,
                 w.row.method, w.row.d_z, w.row.k, w.row.mode, w.row.val_r2);
  }
  finish("train-semisup");
}

// ---------------------------------------------------------------- evaluate

void Pipeline::evaluate() {
  if (!begin("evaluate")) return;
  const fs::path out = run_dir() / "evaluate";
  fs::create_directories(out);
  Table summary({"pipeline", "variant", "target", "level", "n", "mae", "r2", "zero_variance", "null_r2"});
  json report = json::array();
  int rows = 0;

  auto add = [&](const std::string& pipeline, const std::string& variant, const std::string& target,
                 const std::string& level, const eval::Score& s, std::optional<double> null_r2) {
    summary.add_row({pipeline, variant, target, level, std::to_string(s.n), format_double(s.mae), format_double(s.r2),
                     s.zero_variance ? "1" : "0", null_r2 ? format_double(*null_r2) : ""});
    report.push_back({{"pipeline", pipeline}, {"variant", variant}, {"target", target}, {"level", level},
                      {"split", "test"}, {"n", s.n}, {"mae", s.mae}, {"r2", s.r2}, {"zero_variance", s.zero_variance},
                      {"null_r2", null_r2 ? json(*null_r2) : json(nullptr)}});
    ++rows;
  };

  // Supervised branch.
  for (const auto& mode : config_.supervised.modes) {
    const fs::path mdir = run_dir() / "supervised" / mode;
    for (const auto& target : config_.supervised.targets) {
      const fs::path tdir = mdir / target;
      if (!fs::exists(tdir / "hood_predictions.tsv")) {
        throw MissingArtifactError((tdir / "hood_predictions.tsv").string() +
                                   " is missing; run `nbhd train-supervised` first");
      }
      const auto hp = read_hood_predictions(tdir / "hood_predictions.tsv");
      std::optional<double> null_r2;
      if (mode == "resizing" && config_.evaluate.null_permutations > 0) {
        // Same head and budget trained on permuted train/val labels.
        const auto manifest = dataset::DatasetManifest::read(run_dir() / "split" / "resizing.tsv");
        const auto cache = bovw::FeatureStore::load(require(mdir / "features.bin", "train-supervised"));
        std::map<std::string, std::size_t> row_of;
        for (std::size_t i = 0; i < cache.size(); ++i) row_of[cache.item_ids[i]] = i;
        const auto tr = manifest.subset("train"), va = manifest.subset("val"), te = manifest.subset("test");
        const auto rc = regressor_config(config_, mode, target);
        double acc = 0.0;
        for (int p = 0; p < config_.evaluate.null_permutations; ++p) {
          std::vector<double> ty, vy, yy;
          for (auto* it : tr) ty.push_back(supervised::label_of(*it, rc.target));
          for (auto* it : va) vy.push_back(supervised::label_of(*it, rc.target));
          for (auto* it : te) yy.push_back(supervised::label_of(*it, rc.target));
          Rng rng(derive_seed(config_.seed, "null:" + mode + ":" + target + ":" + std::to_string(p)));
          rng.shuffle(ty);
          rng.shuffle(vy);
          auto model = supervised::build_model(rc);
          supervised::train_head(model, gather(cache, row_of, tr), ty, gather(cache, row_of, va), vy);
          const nn::Tensor pr = model.predict_features(gather(cache, row_of, te));
          acc += eval::score(yy, std::vector<double>(pr.data.begin(), pr.data.end())).r2;
        }
        null_r2 = acc / config_.evaluate.null_permutations;
      }
      add("supervised", mode, target, "neighborhood", score_split(hp, "test"), null_r2);
      if (mode == "patching") {
        const Table t = Table::read(tdir / "predictions.tsv");
        std::vector<double> y, p;
        for (std::size_t i = 0; i < t.size(); ++i) {
          if (t.at(i, "split") != "test") continue;
          y.push_back(t.number(i, "truth"));
          p.push_back(t.number(i, "prediction"));
        }
        if (!y.empty()) add("supervised", mode, target, "item", eval::score(y, p), std::nullopt);
      }
      if (mode == "resizing") {
        const Table t = Table::read(tdir / "predictions.tsv");
        std::vector<eval::ResizeObservation> obs;
        for (std::size_t i = 0; i < t.size(); ++i) {
          if (t.at(i, "split") != "test") continue;
          eval::ResizeObservation o;
          o.geoid = t.at(i, "geoid");
          o.orig_width = t.at(i, "orig_width").empty() ? 0 : static_cast<int>(parse_int(t.at(i, "orig_width")));
          o.orig_height = t.at(i, "orig_height").empty() ? 0 : static_cast<int>(parse_int(t.at(i, "orig_height")));
          o.truth = t.number(i, "truth");
          o.prediction = t.number(i, "prediction");
          obs.push_back(o);
        }
        const auto a = eval::resize_error_analysis(obs, config_.preprocess.resize_width,
                                                   config_.preprocess.resize_height, config_.evaluate.resize_bins);
        eval::write_resize_error(out / "resize_error" / target, a);
      }
    }
  }

  // Semi-supervised branch.
  const fs::path sdir = run_dir() / "semisup";
  for (const auto& target : config_.semisup.targets) {
    for (const auto& method : config_.semisup.methods) {
      const fs::path wdir = sdir / target / method;
      if (!fs::exists(wdir / "hood_predictions.tsv")) {
        throw MissingArtifactError((wdir / "hood_predictions.tsv").string() + " is missing; run `nbhd train-semisup` first");
      }
      const auto hp = read_hood_predictions(wdir / "hood_predictions.tsv");
      std::optional<double> null_r2;
      if (config_.evaluate.null_permutations > 0) {
        const auto feats = bovw::FeatureStore::load(wdir / "hood_features.bin");
        const auto forest = bovw::RandomForest::load(wdir / "forest.bin");
        std::map<std::string, std::size_t> row_of;
        for (std::size_t i = 0; i < feats.size(); ++i) row_of[feats.item_ids[i]] = i;
        const Eigen::MatrixXd fx = bovw::to_matrix(feats.x);
        auto rows_for = [&](const std::string& split, std::vector<double>& y) {
          std::vector<Eigen::Index> idx;
          for (const auto& r : hp) {
            if (r.split != split) continue;
            idx.push_back(static_cast<Eigen::Index>(row_of.at(r.geoid)));
            y.push_back(r.truth);
          }
          Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), fx.cols());
          for (std::size_t i = 0; i < idx.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = fx.row(idx[i]);
          return x;
        };
        double acc = 0.0;
        for (int p = 0; p < config_.evaluate.null_permutations; ++p) {
          std::vector<double> ty, yy;
          const Eigen::MatrixXd tx = rows_for("train", ty);
          const Eigen::MatrixXd ex = rows_for("test", yy);
          Rng rng(derive_seed(config_.seed, "null:" + method + ":" + target + ":" + std::to_string(p)));
          rng.shuffle(ty);
          bovw::RandomForest rf;
          bovw::ForestParams fp = forest.params();
          fp.seed = derive_seed(fp.seed, "null:" + std::to_string(p));
          rf.fit(tx, ty, fp);
          acc += eval::score(yy, rf.predict(ex)).r2;
        }
        null_r2 = acc / config_.evaluate.null_permutations;
      }
      add("semisup", method, target, "neighborhood", score_split(hp, "test"), null_r2);
    }
  }
  summary.write(out / "summary.tsv");
  write_file_atomic(out / "report.json", report.dump(2) + "\n");
  spdlog::info("stage=evaluate rows={}", rows);
  finish("evaluate");
}

// ----------------------------------------------------------------- explain

void Pipeline::explain() {
  if (!begin("explain")) return;
  const fs::path out = run_dir() / "explain";
  fs::create_directories(out);
  const auto& ec = config_.explain;

  // Forest attributions for every semi-supervised winner.
  for (const auto& target : config_.semisup.targets) {
    for (const auto& method : config_.semisup.methods) {
      const fs::path wdir = run_dir() / "semisup" / target / method;
      require(wdir / "forest.bin", "train-semisup");
      const auto forest = bovw::RandomForest::load(wdir / "forest.bin");
      const auto feats = bovw::FeatureStore::load(wdir / "hood_features.bin");
      const auto hp = read_hood_predictions(wdir / "hood_predictions.tsv");
      std::map<std::string, std::size_t> row_of;
      for (std::size_t i = 0; i < feats.size(); ++i) row_of[feats.item_ids[i]] = i;
      const Eigen::MatrixXd fx = bovw::to_matrix(feats.x);
      std::vector<std::size_t> train_rows, test_rows;
      for (const auto& r : hp) (r.split == "train" ? train_rows : test_rows).push_back(row_of.at(r.geoid));
      Rng rng(derive_seed(config_.seed, "shap:" + target + ":" + method));
      rng.shuffle(train_rows);
      if (train_rows.size() > static_cast<std::size_t>(ec.shap_background)) train_rows.resize(static_cast<std::size_t>(ec.shap_background));
      std::sort(train_rows.begin(), train_rows.end());
      if (test_rows.size() > static_cast<std::size_t>(ec.shap_hoods)) test_rows.resize(static_cast<std::size_t>(ec.shap_hoods));
      Eigen::MatrixXd bg(static_cast<Eigen::Index>(train_rows.size()), fx.cols());
      for (std::size_t i = 0; i < train_rows.size(); ++i) bg.row(static_cast<Eigen::Index>(i)) = fx.row(static_cast<Eigen::Index>(train_rows[i]));

      std::vector<std::string> header = {"geoid", "baseline", "prediction", "completeness_error"};
      for (Eigen::Index j = 0; j < fx.cols(); ++j) header.push_back("c" + std::to_string(j));
      Table t(header);
      std::vector<double> mean_abs(static_cast<std::size_t>(fx.cols()), 0.0);
      double worst = 0.0;
      for (std::size_t r : test_rows) {
        std::vector<double> x(static_cast<std::size_t>(fx.cols()));
        for (Eigen::Index j = 0; j < fx.cols(); ++j) x[static_cast<std::size_t>(j)] = fx(static_cast<Eigen::Index>(r), j);
        auto a = eval::tree_shap(forest, x, bg);
        double sum = a.baseline;
        for (double v : a.values) sum += v;
        const double err = std::fabs(sum - a.prediction);
        worst = std::max(worst, err);
        std::vector<std::string> row = {feats.item_ids[r], format_double(a.baseline), format_double(a.prediction),
                                        format_double(err)};
        for (std::size_t j = 0; j < a.values.size(); ++j) {
          row.push_back(format_double(a.values[j]));
          mean_abs[j] += std::fabs(a.values[j]) / static_cast<double>(test_rows.size());
        }
        t.add_row(row);
      }
      t.write(out / ("rf_shap_" + target + "_" + method + ".tsv"));
      Table imp({"cluster", "mean_abs_shap"});
      for (std::size_t j = 0; j < mean_abs.size(); ++j) imp.add_row({std::to_string(j), format_double(mean_abs[j])});
      imp.write(out / ("rf_shap_importance_" + target + "_" + method + ".tsv"));
      spdlog::info("stage=explain kind=rf_shap target={} method={} hoods={} max_completeness_error={:.3g}", target,
                   method, test_rows.size(), worst);
    }
  }

  // Cluster sheets for the largest clusters of the first configured winner.
  if (!config_.semisup.targets.empty() && !config_.semisup.methods.empty()) {
    const fs::path wdir = run_dir() / "semisup" / config_.semisup.targets.front() / config_.semisup.methods.front();
    const Table at = Table::read(wdir / "assignments.tsv");
    const auto manifest = dataset::DatasetManifest::read(run_dir() / "split" / "grid.tsv");
    std::map<std::string, const dataset::DatasetItem*> item_of;
    for (const auto& it : manifest.items) item_of[it.item_id] = &it;
    std::vector<int> assign;
    std::vector<std::string> ids;
    std::map<int, int> sizes;
    for (std::size_t i = 0; i < at.size(); ++i) {
      assign.push_back(static_cast<int>(parse_int(at.at(i, "cluster"))));
      ids.push_back(at.at(i, "item_id"));
      ++sizes[assign.back()];
    }
    std::vector<std::pair<int, int>> order;
    for (const auto& [c, n] : sizes) order.emplace_back(-n, c);
    std::sort(order.begin(), order.end());
    geo::TileIndex tiles(list_tiles(config_.paths.tiles));
    auto load = [&](std::size_t i) {
      const auto* it = item_of.at(ids[i]);
      crop::GridCell cell;
      cell.geoid = it->geoid;
      cell.grid_row = static_cast<int>(parse_int(it->extra.at("grid_row")));
      cell.grid_col = static_cast<int>(parse_int(it->extra.at("grid_col")));
      return crop::read_grid_cell(tiles, cell, config_.preprocess.grid_cell, 3);
    };
    Table sheets({"cluster", "size", "frequency", "shown", "png"});
    for (int i = 0; i < std::min<int>(ec.sheet_clusters, static_cast<int>(order.size())); ++i) {
      const int c = order[static_cast<std::size_t>(i)].second;
      const fs::path png = out / fmt::format("cluster_sheet_{}.png", c);
      const auto s = eval::cluster_sheet(assign, load, c, ec.sheet_size, derive_seed(config_.seed, "sheets"), png);
      sheets.add_row({std::to_string(c), std::to_string(s.cluster_size), format_double(s.frequency),
                      std::to_string(s.members.size()), png.filename().string()});
    }
    sheets.write(out / "cluster_sheets.tsv");
  }

  // Masked-region saliency on test images of the first supervised model.
  if (!config_.supervised.modes.empty() && !config_.supervised.targets.empty()) {
    const std::string mode = config_.supervised.modes.front();
    const std::string target = config_.supervised.targets.front();
    const fs::path tdir = run_dir() / "supervised" / mode / target;
    auto model = supervised::load_checkpoint(require(tdir / "model.ckpt", "train-supervised"));
    const auto manifest = dataset::DatasetManifest::read(run_dir() / "split" / (mode + ".tsv"));
    const auto loader = make_loader(mode, config_, config_.supervised.in_channels);
    auto test = manifest.subset("test");
    if (test.size() > static_cast<std::size_t>(ec.saliency_patches)) test.resize(static_cast<std::size_t>(ec.saliency_patches));
    const int ps = config_.preprocess.patch_size;
    Table t({"item_id", "baseline", "prediction", "region_sum", "completeness_error", "evaluations", "regions", "png"});
    eval::SaliencyOptions so;
    so.grid = ec.saliency_grid;
    so.permutations = ec.saliency_permutations;
    for (const auto* it : test) {
      geo::Raster img = loader(*it);
      // Attribution runs on a centred patch to keep the evaluation count cheap.
      if (img.width() > ps || img.height() > ps) {
        img = img.window(std::max(0, (img.height() - ps) / 2), std::max(0, (img.width() - ps) / 2),
                         std::min(ps, img.height()), std::min(ps, img.width()));
      }
      so.seed = derive_seed(config_.seed, "saliency:" + it->item_id);
      const auto map = eval::cnn_saliency([&](const geo::Raster& r) { return model.predict_image(r); }, img, so);
      double sum = 0.0;
      std::string regions;
      for (std::size_t i = 0; i < map.regions.size(); ++i) {
        sum += map.regions[i];
        regions += (i ? "," : "") + format_double(map.regions[i]);
      }
      const fs::path png = out / ("saliency_" + it->item_id + ".png");
      geo::write_png(png, eval::saliency_overlay(img, map));
      t.add_row({it->item_id, format_double(map.baseline), format_double(map.prediction), format_double(sum),
                 format_double(std::fabs(map.prediction - map.baseline - sum)), std::to_string(map.evaluations),
                 regions, png.filename().string()});
    }
    t.write(out / "saliency.tsv");
  }
  finish("explain");
}

// --------------------------------------------------------------------- map

void Pipeline::map() {
  if (!begin("map")) return;
  const fs::path out = run_dir() / "map";
  fs::create_directories(out);
  const geo::BoundarySet bounds = geo::load_boundaries(config_.paths.boundaries);
  const auto labels = read_labels(require(run_dir() / "metrics" / "labels.tsv", "metrics"));
  for (const std::string var : {"density", "mhi", "education"}) {
    std::map<std::string, double> values;
    for (const auto& [g, l] : labels) values[g] = var == "density" ? l.density : var == "mhi" ? l.mhi : l.education;
    eval::choropleth(values, bounds.records, var + " (survey)", out / ("labels_" + var + ".svg"), config_.map.bins);
  }
  auto map_preds = [&](const fs::path& file, const std::string& name, const std::string& title) {
    if (!fs::exists(file)) return;
    std::map<std::string, double> values;
    for (const auto& r : read_hood_predictions(file)) values[r.geoid] = r.prediction;
    if (!values.empty()) eval::choropleth(values, bounds.records, title, out / (name + ".svg"), config_.map.bins);
  };
  for (const auto& mode : config_.supervised.modes) {
    for (const auto& target : config_.supervised.targets) {
      map_preds(run_dir() / "supervised" / mode / target / "hood_predictions.tsv", "supervised_" + mode + "_" + target,
                target + " predicted (supervised, " + mode + ")");
    }
  }
  for (const auto& target : config_.semisup.targets) {
    for (const auto& method : config_.semisup.methods) {
      map_preds(run_dir() / "semisup" / target / method / "hood_predictions.tsv", "semisup_" + method + "_" + target,
                target + " predicted (" + method + ")");
    }
  }
  finish("map");
}

}  // namespace nbhd::pipeline
