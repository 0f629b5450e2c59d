#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "energyfc/checkpoint.hpp"
#include "energyfc/dataset.hpp"
#include "energyfc/nn.hpp"
#include "energyfc/optimizer.hpp"

namespace energyfc {

/// Window subsampling. A stride of k keeps every k-th start row; strides
/// coprime with the 50-row connection interval keep all event phases.
struct WindowStrides {
  int train = 1;
  int eval = 1;
};

/// Windows for the three splits plus the normalisation fitted on training rows.
struct DatasetSplits {
  WindowSet train;
  WindowSet val;
  WindowSet test;
  NormStats norm;
  std::string dataset_hash;
};

/// Splits every node 70/15/15, fits the normaliser on the training rows and
/// windows each split.
DatasetSplits prepare_splits(std::span<const DownsampledTrace> traces, int seq_len, int horizon,
                             WindowStrides strides = {},
                             CurrentTransform transform = CurrentTransform::kLog1p);

/// Test windows only, encoded with an existing normaliser.
WindowSet prepare_test_windows(std::span<const DownsampledTrace> traces, const NormStats& norm,
                               int seq_len, int horizon, int stride = 1);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mape_pct = 0.0;
};

enum class StopReason { kMaxEpochs, kPatience };
std::string_view to_string(StopReason reason);

struct TrainRun {
  NetworkConfig config;
  Hyperparams hyper;
  std::vector<EpochRecord> history;
  Checkpoint best;
  int best_epoch = 0;
  StopReason stop_reason = StopReason::kMaxEpochs;
};

struct TrainOptions {
  /// Called after every epoch with the record just appended.
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Order in which the training windows are visited in `epoch` (0-based).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Mini-batch Adam on normalised-target MSE, one validation pass per epoch,
/// early stop after `patience` epochs without a new best validation MAPE.
/// Throws NumericError (with epoch and batch) when the loss turns non-finite.
TrainRun train(const NetworkConfig& config, const DatasetSplits& data, const Hyperparams& hyper,
               const TrainOptions& options = {});

inline constexpr std::string_view kHistoryHeader = "epoch,train_loss,val_loss,val_mape_pct";
std::string history_csv(std::span<const EpochRecord> history);
std::vector<EpochRecord> parse_history_csv(std::string_view text);

// ---------------------------------------------------------------------------
// Run directories: <runs>/<config-hash>/{checkpoint,history.csv,run.meta}

/// Stable 16-hex-digit identity of a run: config, hyperparameters, seed,
/// window strides and dataset.
std::string run_id(const NetworkConfig& config, const Hyperparams& hyper,
                   const std::string& dataset_hash, WindowStrides strides);

struct RunRecord {
  std::string id;
  std::filesystem::path dir;
  std::string dataset_hash;
  WindowStrides strides;
  TrainRun run;
};

void write_run(const RunRecord& record);

/// Reads a completed run; returns nullopt when the directory lacks run.meta.
std::optional<RunRecord> read_run(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Experiment grid.

struct GridEntry {
  Arch arch = Arch::kLstmp;
  int h_cell = 32;
  int h_out = 1;

  bool operator==(const GridEntry&) const = default;
};

enum class GridPreset { kPaper, kDesk };
GridPreset grid_preset_from_string(std::string_view name);

/// Hidden-size sweep at H_out = 1 followed by the horizon sweep over
/// H_cell {32, 64}. Includes entries that violate H_out < H_cell; the desk
/// preset swaps H_cell 650 for 128.
std::vector<GridEntry> grid_entries(GridPreset preset);

struct PlannedRun {
  GridEntry entry;
  std::size_t index = 0;  // position in the requested grid; seeds are root + index
};

struct GridPlan {
  std::vector<PlannedRun> runs;
  std::vector<std::pair<GridEntry, std::string>> skipped;
};

/// Drops entries whose configuration is invalid, logging one warning each.
GridPlan plan_grid(std::span<const GridEntry> entries, int seq_len = 50, int input_size = 10);

struct GridRunResult {
  PlannedRun planned;
  RunRecord record;
  bool resumed = false;
};

/// Trains every planned run that does not already have a completed run
/// directory under `runs_dir`; existing ones are loaded instead.
std::vector<GridRunResult> run_grid(const GridPlan& plan, std::span<const DownsampledTrace> traces,
                                    const Hyperparams& hyper, const std::filesystem::path& runs_dir,
                                    int seq_len = 50, WindowStrides strides = {});

}  // namespace energyfc
