#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "energyfc/dataset.hpp"
#include "energyfc/evaluation.hpp"
#include "energyfc/nn.hpp"
#include "energyfc/optimizer.hpp"
#include "energyfc/synthgen.hpp"
#include "energyfc/trainer.hpp"

namespace energyfc {

struct PipelinePaths {
  std::filesystem::path raw_dir = "data/raw";
  std::filesystem::path downsampled_dir = "data/downsampled";
  std::filesystem::path runs_dir = "runs";
  std::filesystem::path reports_dir = "reports";
};

/// Everything the commands need, read from one JSON file. Command-line flags
/// are applied on top by the caller.
struct PipelineConfig {
  PipelinePaths paths;
  std::uint64_t seed = 0;  // root seed; synthesis uses it as is, run k uses seed + k

  double duration_s = 600.0;
  std::array<NodeProfile, 4> profiles = default_profiles();

  int seq_len = 50;
  int factor = 100;
  WindowStrides strides;
  CurrentTransform transform = CurrentTransform::kLog1p;

  Arch arch = Arch::kLstmp;
  int h_cell = 32;
  int h_out = 1;
  std::optional<GridPreset> grid;

  Hyperparams hyper;

  void validate() const;
  NetworkConfig network() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig parse_pipeline_config(std::string_view json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Replaces the root seed with ENERGYFC_SEED when set to an unsigned integer.
void apply_seed_env(PipelineConfig& config, const char* value);

/// One raw CSV plus metadata sidecar per node: <raw_dir>/<node>.csv, <node>.meta.json.
std::vector<std::filesystem::path> cmd_generate(const PipelineConfig& config);

/// Downsamples every raw CSV in raw_dir into <downsampled_dir>/<node>.csv.
std::vector<std::filesystem::path> cmd_preprocess(const PipelineConfig& config);

/// All downsampled CSVs of a directory, in file-name order.
std::vector<DownsampledTrace> load_downsampled_dir(const std::filesystem::path& dir);

/// A single run from (arch, h_cell, h_out), or the configured grid.
std::vector<GridRunResult> cmd_train(const PipelineConfig& config);

struct EvalRequest {
  std::vector<std::string> run_ids;
  bool all = false;
  bool store_and_copy = false;
  int window = 50;
  std::size_t overlay_length = 500;
};

struct EvalOutput {
  std::vector<EvalReport> reports;
  ComparisonTable table;
  std::vector<std::filesystem::path> files;
};

/// Evaluates the chosen runs on the test split and writes report.csv,
/// report.json and the SVG plots into reports_dir.
EvalOutput cmd_eval(const PipelineConfig& config, const EvalRequest& request);

struct PredictRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::int64_t at_us = 0;
  std::optional<NodeId> node;
};

struct Prediction {
  NodeId node = NodeId::kCentral;
  std::vector<std::int64_t> timestamps_us;
  std::vector<double> sum_current_ua;
};

/// Forecasts the H_out rows starting at `at_us` from the T rows before it.
Prediction cmd_predict(const PredictRequest& request);

}  // namespace energyfc
