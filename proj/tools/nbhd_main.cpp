#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <optional>

#include "nbhd/core/error.hpp"
#include "nbhd/pipeline/config.hpp"
#include "nbhd/pipeline/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::string survey_fixture;
  std::string run_dir;
  std::string log_level = "info";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "YAML configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "override the global seed");
  sub->add_flag("--force", c.force, "rerun stages whose outputs already exist");
  sub->add_option("--survey-fixture", c.survey_fixture, "read survey rows from this JSON file instead of the API");
  sub->add_option("--run-dir", c.run_dir, "use this run directory");
  sub->add_option("--log-level", c.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_logger_mt("nbhd");
  logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e level=%l %v");
  spdlog::set_default_logger(logger);

  CLI::App app{"Neighborhood density, income and education estimation from aerial imagery"};
  app.require_subcommand(1, 1);
  Common common;
  std::vector<std::string> targets, methods;
  std::string grid;

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"synth", "write a synthetic city (tiles, boundaries, survey fixture) and the backbone weights"},
      {"make-backbone", "write the frozen backbone weights"},
      {"ingest", "pair tiles with boundaries, crop neighborhoods, fetch survey rows"},
      {"metrics", "filter neighborhoods and compute density, MHI and education labels"},
      {"preprocess", "build patching, resizing and grid manifests"},
      {"split", "assign train/val/test splits"},
      {"train-supervised", "train the CNN regressors"},
      {"train-semisup", "cluster grid features and fit random-forest regressors"},
      {"evaluate", "score test predictions and write reports"},
      {"explain", "forest Shapley values, CNN saliency, cluster sheets"},
      {"map", "choropleth maps of labels and predictions"},
      {"all", "run every stage from ingest to map"},
  };
  for (const auto& [name, help] : subs) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, common);
    if (name == "train-semisup" || name == "all") {
      sub->add_option("--target", targets, "restrict to these targets (density, mhi, education)")
          ->check(CLI::IsMember({"density", "mhi", "education"}));
      sub->add_option("--method", methods, "restrict to these clustering methods")
          ->check(CLI::IsMember({"kmeans", "dec"}));
      sub->add_option("--grid", grid, "YAML file overriding the search grid")->check(CLI::ExistingFile);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  spdlog::set_level(spdlog::level::from_str(common.log_level));
  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    nbhd::pipeline::PipelineConfig cfg;
    if (!common.config.empty()) cfg = nbhd::pipeline::PipelineConfig::load(common.config);
    if (common.seed) cfg.seed = *common.seed;
    if (!common.survey_fixture.empty()) cfg.survey.fixture = common.survey_fixture;
    nbhd::pipeline::RunOptions opts;
    opts.force = common.force;
    opts.targets = targets;
    opts.methods = methods;
    opts.grid_file = grid;
    opts.run_dir = common.run_dir;
    nbhd::pipeline::Pipeline p(cfg, opts);
    p.run(stage);
    if (stage != "synth" && stage != "make-backbone") std::cout << p.run_dir().string() << "\n";
    return 0;
  } catch (const nbhd::Error& e) {
    spdlog::error("stage={} event=failed kind={} message=\"{}\"", stage, e.user_error() ? "user" : "internal", e.what());
    return e.user_error() ? 1 : 2;
  } catch (const std::exception& e) {
    spdlog::error("stage={} event=failed kind=internal message=\"{}\"", stage, e.what());
    return 2;
  }
}
