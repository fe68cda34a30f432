#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nbhd/pipeline/config.hpp"

namespace nbhd::pipeline {

struct RunOptions {
  bool force = false;
  // Narrow train-semisup to some targets/methods and swap in a grid file.
  std::vector<std::string> targets;
  std::vector<std::string> methods;
  std::string grid_file;
  // Use this run directory instead of <output_root>/<timestamp>-<hash>.
  std::string run_dir;
};

// Stage order for `all`. `synth` and `make-backbone` produce inputs and are
// run separately.
const std::vector<std::string>& stage_order();
bool is_stage(const std::string& name);

// Stages hand off through files under one run directory. A stage whose
// completion marker exists is skipped unless forced; a missing upstream
// artifact raises MissingArtifactError naming the stage to run.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, RunOptions options);

  const PipelineConfig& config() const { return config_; }
  // Created on first use; reused when a directory with the same config hash
  // already exists under output_root.
  const std::filesystem::path& run_dir();

  void run(const std::string& stage);

  void synth();
  void make_backbone();
  void ingest();
  void metrics();
  void preprocess();
  void split();
  void train_supervised();
  void train_semisup();
  void evaluate();
  void explain();
  void map();
  void all();

  // Stages actually executed (not skipped) by this object, in order.
  const std::vector<std::string>& executed() const { return executed_; }

 private:
  bool begin(const std::string& stage);
  void finish(const std::string& stage);
  std::string marker(const std::string& stage) const;
  std::filesystem::path require(const std::filesystem::path& p, const std::string& stage);

  PipelineConfig config_;
  RunOptions options_;
  std::filesystem::path run_dir_;
  std::vector<std::string> executed_;
};

}  // namespace nbhd::pipeline
