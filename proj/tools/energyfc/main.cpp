#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "energyfc/errors.hpp"
#include "energyfc/pipeline.hpp"

namespace {

using namespace energyfc;

// Flags that were not given stay empty and leave the config untouched.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";

  std::optional<std::string> raw_dir, downsampled_dir, runs_dir, reports_dir;
  std::optional<double> duration_s;
  std::optional<int> factor, seq_len, train_stride, eval_stride;
  std::optional<std::string> arch, grid;
  std::optional<int> h_cell, h_out;
  std::optional<double> learning_rate;
  std::optional<int> batch_size, max_epochs, patience;
};

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig c = o.config_path.empty() ? PipelineConfig{} : load_pipeline_config(o.config_path);
  apply_seed_env(c, std::getenv("ENERGYFC_SEED"));
  if (o.seed) c.seed = *o.seed;
  if (o.raw_dir) c.paths.raw_dir = *o.raw_dir;
  if (o.downsampled_dir) c.paths.downsampled_dir = *o.downsampled_dir;
  if (o.runs_dir) c.paths.runs_dir = *o.runs_dir;
  if (o.reports_dir) c.paths.reports_dir = *o.reports_dir;
  if (o.duration_s) c.duration_s = *o.duration_s;
  if (o.factor) c.factor = *o.factor;
  if (o.seq_len) c.seq_len = *o.seq_len;
  if (o.train_stride) c.strides.train = *o.train_stride;
  if (o.eval_stride) c.strides.eval = *o.eval_stride;
  if (o.arch) c.arch = arch_from_string(*o.arch);
  if (o.h_cell || o.h_out) c.grid.reset();
  if (o.h_cell) c.h_cell = *o.h_cell;
  if (o.h_out) c.h_out = *o.h_out;
  if (o.grid) c.grid = grid_preset_from_string(*o.grid);
  if (o.learning_rate) c.hyper.learning_rate = *o.learning_rate;
  if (o.batch_size) c.hyper.batch_size = *o.batch_size;
  if (o.max_epochs) c.hyper.max_epochs = *o.max_epochs;
  if (o.patience) c.hyper.patience = *o.patience;
  return c;
}

void print_table(const ComparisonTable& table) {
  std::cout << comparison_csv(table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-consumption forecasting for BLE nodes with a two-layer LSTMP"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_path, "Pipeline config (JSON)");
  app.add_option("--seed", o.seed, "Root seed (overrides config and ENERGYFC_SEED)");
  app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off");

  auto* generate = app.add_subcommand("generate", "Synthesise raw 100 kHz traces for the four nodes");
  generate->add_option("--raw-dir", o.raw_dir, "Output directory");
  generate->add_option("--duration", o.duration_s, "Seconds per node");

  auto* preprocess = app.add_subcommand("preprocess", "Downsample raw traces to 1 kHz rows");
  preprocess->add_option("--raw-dir", o.raw_dir, "Directory of raw CSVs and sidecars");
  preprocess->add_option("--out-dir", o.downsampled_dir, "Downsampled output directory");
  preprocess->add_option("--factor", o.factor, "Raw samples per output row");

  auto* train = app.add_subcommand("train", "Train one network or a grid");
  train->add_option("--data-dir", o.downsampled_dir, "Directory of downsampled CSVs");
  train->add_option("--runs-dir", o.runs_dir, "Run output directory");
  train->add_option("--arch", o.arch, "LSTMP or LSTM_BASELINE");
  train->add_option("--h-cell", o.h_cell, "Cell size");
  train->add_option("--h-out", o.h_out, "Output size (prediction steps)");
  train->add_option("--grid", o.grid, "Grid preset: paper or desk")->excludes("--h-cell");
  train->add_option("--T", o.seq_len, "Input window length");
  train->add_option("--lr", o.learning_rate, "Adam learning rate");
  train->add_option("--batch", o.batch_size, "Mini-batch size");
  train->add_option("--epochs", o.max_epochs, "Maximum epochs");
  train->add_option("--patience", o.patience, "Early-stopping patience");
  train->add_option("--train-stride", o.train_stride, "Keep every k-th training window");
  train->add_option("--eval-stride", o.eval_stride, "Keep every k-th validation window");

  EvalRequest eval_request;
  auto* eval = app.add_subcommand("eval", "Evaluate runs on the test split and write reports");
  eval->add_option("run_ids", eval_request.run_ids, "Run ids under the runs directory");
  eval->add_flag("--all", eval_request.all, "Evaluate every completed run");
  eval->add_flag("--store-and-copy", eval_request.store_and_copy, "Add a store-and-copy row");
  eval->add_option("--window", eval_request.window, "Store-and-copy window in rows");
  eval->add_option("--data-dir", o.downsampled_dir, "Directory of downsampled CSVs");
  eval->add_option("--runs-dir", o.runs_dir, "Run directory");
  eval->add_option("--reports-dir", o.reports_dir, "Report output directory");
  eval->add_option("--eval-stride", o.eval_stride, "Keep every k-th test window");

  PredictRequest predict_request;
  std::string node_name;
  auto* predict = app.add_subcommand("predict", "Forecast the next H_out sums at a timestamp");
  predict->add_option("--checkpoint", predict_request.checkpoint, "Checkpoint file")->required();
  predict->add_option("--data", predict_request.data, "Downsampled CSV")->required();
  predict->add_option("--at", predict_request.at_us, "First predicted timestamp (us)")->required();
  predict->add_option("--node", node_name, "Node to read when the CSV holds several");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(o.log_level));
    if (*predict) {
      if (!node_name.empty()) predict_request.node = node_from_string(node_name);
      const Prediction p = cmd_predict(predict_request);
      std::cout << "timestamp_us,predicted_sum_current_ua,node\n";
      for (std::size_t k = 0; k < p.timestamps_us.size(); ++k) {
        std::cout << p.timestamps_us[k] << ',' << p.sum_current_ua[k] << ',' << to_string(p.node)
                  << '\n';
      }
      return 0;
    }

    const PipelineConfig config = resolve(o);
    if (*generate) {
      for (const auto& path : cmd_generate(config)) std::cout << path.string() << '\n';
    } else if (*preprocess) {
      for (const auto& path : cmd_preprocess(config)) std::cout << path.string() << '\n';
    } else if (*train) {
      for (const auto& r : cmd_train(config)) {
        const auto& run = r.record.run;
        std::cout << r.record.id << ' ' << to_string(run.config.arch) << " H_cell="
                  << run.config.cell_size << " H_out=" << run.config.output_size
                  << " best_epoch=" << run.best_epoch
                  << " val_mape=" << run.history.at(run.best_epoch > 0 ? run.best_epoch - 1 : 0).val_mape_pct
                  << (r.resumed ? " (existing)" : "") << '\n';
      }
    } else if (*eval) {
      print_table(cmd_eval(config, eval_request).table);
    }
    return 0;
  } catch (const energyfc::Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
