#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "energyfc/checkpoint.hpp"
#include "energyfc/dataset.hpp"
#include "energyfc/nn.hpp"

namespace energyfc {

inline constexpr double kMapeEps = 1e-8;

/// Mean absolute percentage error, in percent:
/// 100/n * sum |y - y_hat| / max(eps, |y|).
double mape(std::span<const double> y, std::span<const double> y_hat, double eps = kMapeEps);

/// Running MAPE numerator and term count.
struct MapeAccumulator {
  double ratio_sum = 0.0;
  std::size_t terms = 0;

  void add(double y, double y_hat, double eps = kMapeEps);
  double percent() const;
};

struct EvalReport {
  std::string label;            // architecture name, or STORE_COPY
  NetworkConfig config;
  double overall_mape_pct = 0.0;
  std::map<NodeId, double> per_node_mape_pct;
  std::map<NodeId, std::size_t> per_node_terms;
  std::size_t n_samples = 0;
  std::size_t n_terms = 0;
  std::size_t parameter_count = 0;
  std::uint64_t seed = 0;
  std::string dataset_hash;
};

/// Anything that maps windows to raw-scale predictions (B x horizon).
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual int seq_len() const = 0;
  virtual int horizon() const = 0;
  virtual Eigen::MatrixXd predict(const WindowSet& set,
                                  std::span<const std::size_t> indices) const = 0;
};

/// A trained network plus its normalisation; outputs are decoded to raw sums.
class NetworkForecaster : public Forecaster {
 public:
  explicit NetworkForecaster(Checkpoint checkpoint);

  int seq_len() const override { return checkpoint_.config.seq_len; }
  int horizon() const override { return checkpoint_.config.output_size; }
  Eigen::MatrixXd predict(const WindowSet& set,
                          std::span<const std::size_t> indices) const override;

  /// Single-window prediction from an encoded T x H_in input.
  Eigen::VectorXd predict_window(const Eigen::MatrixXd& window) const;

  const Checkpoint& checkpoint() const { return checkpoint_; }

 private:
  Checkpoint checkpoint_;
};

/// Flattened MAPE over every predicted step of every window, grouped by node.
EvalReport evaluate(const Forecaster& model, const WindowSet& test, int batch_size = 512);

/// Throws ShapeError when the checkpoint does not fit the windows.
EvalReport evaluate_model(const Checkpoint& checkpoint, const WindowSet& test);

/// y_hat[t] = sum_current[t - window] for t >= window.
std::vector<double> store_and_copy_predict(std::span<const DownsampledRow> rows, int window = 50);

/// Store-and-copy MAPE over each node's rows (label STORE_COPY, T = window).
EvalReport store_and_copy_report(std::span<const DownsampledTrace> traces, int window = 50);

struct ComparisonRow {
  std::string arch;
  int h_cell = 0;
  int h_out = 0;
  int t = 0;
  std::size_t params = 0;
  double mape_overall_pct = 0.0;
  std::array<std::optional<double>, 4> mape_node_pct;  // one-hot node order
  std::uint64_t seed = 0;
  std::string dataset_hash;
  std::optional<double> param_ratio;  // baseline params / row params
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::optional<std::size_t> baseline_row;
};

/// Rows sorted by (arch, H_cell, H_out). The baseline defaults to the first
/// LSTM_BASELINE report.
ComparisonTable compare_report(std::span<const EvalReport> reports,
                               std::optional<std::size_t> baseline = std::nullopt);

inline constexpr std::string_view kReportHeader =
    "arch,h_cell,h_out,t,params,mape_overall_pct,mape_central_pct,mape_hr_pct,mape_bt_pct,"
    "mape_os_pct,seed,dataset_hash";

std::string comparison_csv(const ComparisonTable& table);
std::string comparison_json(const ComparisonTable& table);

/// Truth and one-step-ahead prediction over a stretch of one node's test rows.
struct TraceOverlay {
  NodeId node = NodeId::kCentral;
  std::vector<std::int64_t> timestamps_us;
  std::vector<double> truth;
  std::vector<double> prediction;
};

/// First `length` consecutive windows of `node` in `set`, first horizon step only.
TraceOverlay make_overlay(const Forecaster& model, const WindowSet& set, NodeId node,
                          std::size_t length);

/// Writes mape_vs_hcell.svg, mape_vs_hout.svg, params_vs_hout.svg and one
/// overlay_<node>.svg per overlay into `dir`. Returns the written paths.
std::vector<std::filesystem::path> emit_plots(const ComparisonTable& table,
                                              std::span<const TraceOverlay> overlays,
                                              const std::filesystem::path& dir);

}  // namespace energyfc
