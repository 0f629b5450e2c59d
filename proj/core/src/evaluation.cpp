#include "energyfc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "energyfc/errors.hpp"
#include "energyfc/svg.hpp"
#include "text_format.hpp"

namespace energyfc {

double mape(std::span<const double> y, std::span<const double> y_hat, double eps) {
  if (y.size() != y_hat.size()) {
    throw ShapeError("mape: " + std::to_string(y.size()) + " targets vs " +
                     std::to_string(y_hat.size()) + " predictions");
  }
  if (y.empty()) throw DataError("mape: no samples");
  MapeAccumulator acc;
  for (std::size_t i = 0; i < y.size(); ++i) acc.add(y[i], y_hat[i], eps);
  return acc.percent();
}

void MapeAccumulator::add(double y, double y_hat, double eps) {
  ratio_sum += std::abs(y - y_hat) / std::max(eps, std::abs(y));
  ++terms;
}

double MapeAccumulator::percent() const {
  return terms == 0 ? 0.0 : 100.0 * ratio_sum / static_cast<double>(terms);
}

NetworkForecaster::NetworkForecaster(Checkpoint checkpoint) : checkpoint_(std::move(checkpoint)) {
  check_shapes(checkpoint_.config, checkpoint_.params);
}

Eigen::MatrixXd NetworkForecaster::predict(const WindowSet& set,
                                           std::span<const std::size_t> indices) const {
  const auto& config = checkpoint_.config;
  const auto chunk = static_cast<std::size_t>(eval_batch_size(config));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), config.output_size);
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
    const auto part = indices.subspan(begin, std::min(chunk, indices.size() - begin));
    set.gather(part, inputs, targets);
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(part.size())) =
        forward_batch(config, checkpoint_.params, inputs, nullptr)
            .unaryExpr([&](double z) { return checkpoint_.norm.decode_sum(z); });
  }
  return out;
}

Eigen::VectorXd NetworkForecaster::predict_window(const Eigen::MatrixXd& window) const {
  const Eigen::VectorXd z =
      network_forward(checkpoint_.config, window, checkpoint_.params).prediction;
  return z.unaryExpr([&](double v) { return checkpoint_.norm.decode_sum(v); });
}

EvalReport evaluate(const Forecaster& model, const WindowSet& test, int batch_size) {
  if (model.seq_len() != test.seq_len() || model.horizon() != test.horizon()) {
    throw ShapeError("model expects T=" + std::to_string(model.seq_len()) + ", H_out=" +
                     std::to_string(model.horizon()) + " but windows have T=" +
                     std::to_string(test.seq_len()) + ", H_out=" +
                     std::to_string(test.horizon()));
  }
  if (test.empty()) throw DataError("evaluation set is empty");

  std::map<NodeId, MapeAccumulator> per_node;
  std::map<NodeId, std::size_t> samples;
  std::vector<std::size_t> idx;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t begin = 0; begin < test.size(); begin += bs) {
    const std::size_t end = std::min(test.size(), begin + bs);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Eigen::MatrixXd pred = model.predict(test, idx);
    test.gather(idx, inputs, targets);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const NodeId node = test.node(idx[b]);
      auto& acc = per_node[node];
      ++samples[node];
      const auto row = static_cast<Eigen::Index>(b);
      for (Eigen::Index j = 0; j < pred.cols(); ++j) acc.add(targets(row, j), pred(row, j));
    }
  }

  EvalReport report;
  MapeAccumulator total;
  for (const auto& [node, acc] : per_node) {
    report.per_node_mape_pct[node] = acc.percent();
    report.per_node_terms[node] = acc.terms;
    total.ratio_sum += acc.ratio_sum;
    total.terms += acc.terms;
    report.n_samples += samples[node];
  }
  report.overall_mape_pct = total.percent();
  report.n_terms = total.terms;
  return report;
}

EvalReport evaluate_model(const Checkpoint& checkpoint, const WindowSet& test) {
  if (checkpoint.config.input_size != kFeatureCount) {
    throw ShapeError("checkpoint expects H_in=" + std::to_string(checkpoint.config.input_size) +
                     ", dataset rows encode " + std::to_string(kFeatureCount) + " features");
  }
  EvalReport report = evaluate(NetworkForecaster(checkpoint), test);
  report.label = std::string(to_string(checkpoint.config.arch));
  report.config = checkpoint.config;
  report.parameter_count = count_parameters(checkpoint.config);
  return report;
}

std::vector<double> store_and_copy_predict(std::span<const DownsampledRow> rows, int window) {
  if (window <= 0) throw ConfigError("store-and-copy window must be > 0");
  const auto w = static_cast<std::size_t>(window);
  if (rows.size() <= w) {
    throw DataError("store-and-copy needs more than " + std::to_string(window) + " rows, got " +
                    std::to_string(rows.size()));
  }
  std::vector<double> out;
  out.reserve(rows.size() - w);
  for (std::size_t t = w; t < rows.size(); ++t) out.push_back(rows[t - w].sum_current_ua);
  return out;
}

EvalReport store_and_copy_report(std::span<const DownsampledTrace> traces, int window) {
  EvalReport report;
  report.label = "STORE_COPY";
  report.config.seq_len = window;
  report.config.output_size = 1;
  report.config.cell_size = 0;
  report.config.input_size = 1;
  MapeAccumulator total;
  for (const auto& trace : traces) {
    const auto pred = store_and_copy_predict(trace.rows, window);
    MapeAccumulator acc;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      acc.add(trace.rows[k + static_cast<std::size_t>(window)].sum_current_ua, pred[k]);
    }
    report.per_node_mape_pct[trace.meta.node] = acc.percent();
    report.per_node_terms[trace.meta.node] = acc.terms;
    total.ratio_sum += acc.ratio_sum;
    total.terms += acc.terms;
    report.n_samples += acc.terms;
  }
  report.overall_mape_pct = total.percent();
  report.n_terms = total.terms;
  return report;
}

ComparisonTable compare_report(std::span<const EvalReport> reports,
                               std::optional<std::size_t> baseline) {
  ComparisonTable table;
  if (reports.empty()) return table;
  if (baseline && *baseline >= reports.size()) throw ConfigError("baseline index out of range");
  if (!baseline) {
    for (std::size_t k = 0; k < reports.size(); ++k) {
      if (reports[k].label == to_string(Arch::kLstmBaseline)) {
        baseline = k;
        break;
      }
    }
  }

  std::vector<std::size_t> order(reports.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = reports[a];
    const auto& rb = reports[b];
    return std::tie(ra.label, ra.config.cell_size, ra.config.output_size) <
           std::tie(rb.label, rb.config.cell_size, rb.config.output_size);
  });

  for (const std::size_t k : order) {
    const EvalReport& r = reports[k];
    ComparisonRow row;
    row.arch = r.label;
    row.h_cell = r.config.cell_size;
    row.h_out = r.config.output_size;
    row.t = r.config.seq_len;
    row.params = r.parameter_count;
    row.mape_overall_pct = r.overall_mape_pct;
    for (const NodeId node : kAllNodes) {
      const auto it = r.per_node_mape_pct.find(node);
      if (it != r.per_node_mape_pct.end()) {
        row.mape_node_pct[static_cast<std::size_t>(node)] = it->second;
      }
    }
    row.seed = r.seed;
    row.dataset_hash = r.dataset_hash;
    if (baseline && row.params > 0) {
      row.param_ratio = static_cast<double>(reports[*baseline].parameter_count) /
                        static_cast<double>(row.params);
    }
    if (baseline && k == *baseline) table.baseline_row = table.rows.size();
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string comparison_csv(const ComparisonTable& table) {
  std::string out(kReportHeader);
  out += '\n';
  for (const auto& row : table.rows) {
    out += row.arch + ',' + std::to_string(row.h_cell) + ',' + std::to_string(row.h_out) + ',' +
           std::to_string(row.t) + ',' + std::to_string(row.params) + ',' +
           detail::format_fixed(row.mape_overall_pct, 4);
    for (const auto& v : row.mape_node_pct) {
      out += ',';
      out += v ? detail::format_fixed(*v, 4) : std::string("n/a");
    }
    out += ',' + std::to_string(row.seed) + ',' + row.dataset_hash + '\n';
  }
  return out;
}

std::string comparison_json(const ComparisonTable& table) {
  nlohmann::ordered_json doc;
  doc["baseline_row"] =
      table.baseline_row ? nlohmann::ordered_json(*table.baseline_row) : nlohmann::ordered_json();
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : table.rows) {
    nlohmann::ordered_json r;
    r["arch"] = row.arch;
    r["h_cell"] = row.h_cell;
    r["h_out"] = row.h_out;
    r["t"] = row.t;
    r["params"] = row.params;
    r["mape_overall_pct"] = row.mape_overall_pct;
    nlohmann::ordered_json nodes;
    for (const NodeId node : kAllNodes) {
      const auto& v = row.mape_node_pct[static_cast<std::size_t>(node)];
      nodes[std::string(to_string(node))] = v ? nlohmann::ordered_json(*v) : "n/a";
    }
    r["mape_node_pct"] = std::move(nodes);
    r["param_ratio_vs_baseline"] =
        row.param_ratio ? nlohmann::ordered_json(*row.param_ratio) : "n/a";
    r["seed"] = row.seed;
    r["dataset_hash"] = row.dataset_hash;
    rows.push_back(std::move(r));
  }
  doc["rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

TraceOverlay make_overlay(const Forecaster& model, const WindowSet& set, NodeId node,
                          std::size_t length) {
  TraceOverlay overlay;
  overlay.node = node;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < set.size() && idx.size() < length; ++i) {
    if (set.node(i) == node) idx.push_back(i);
  }
  if (idx.empty()) return overlay;
  const Eigen::MatrixXd pred = model.predict(set, idx);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Sample s = set.sample(idx[k]);
    overlay.timestamps_us.push_back(s.t0_us);
    overlay.truth.push_back(s.target(0));
    overlay.prediction.push_back(pred(static_cast<Eigen::Index>(k), 0));
  }
  return overlay;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// One series per (arch, H_cell) over categorical H_out values.
svg::LineChart horizon_chart(const ComparisonTable& table, bool params, const std::string& title,
                             const std::string& y_label) {
  std::set<int> outs;
  for (const auto& row : table.rows) {
    if (row.arch != "STORE_COPY") outs.insert(row.h_out);
  }
  const std::vector<int> categories(outs.begin(), outs.end());
  svg::LineChart chart;
  chart.title = title;
  chart.x_label = "H_out (prediction steps)";
  chart.y_label = y_label;
  for (const int h : categories) chart.x_categories.push_back(std::to_string(h));

  std::map<std::pair<std::string, int>, std::map<int, std::vector<double>>> grouped;
  for (const auto& row : table.rows) {
    if (row.arch == "STORE_COPY") continue;
    grouped[{row.arch, row.h_cell}][row.h_out].push_back(
        params ? static_cast<double>(row.params) : row.mape_overall_pct);
  }
  for (const auto& [key, by_out] : grouped) {
    if (by_out.size() < 2) continue;
    svg::Series s;
    s.name = key.first + " H_cell=" + std::to_string(key.second);
    for (const auto& [h_out, values] : by_out) {
      std::vector<double> v = values;
      std::sort(v.begin(), v.end());
      const auto pos = std::lower_bound(categories.begin(), categories.end(), h_out);
      s.x.push_back(static_cast<double>(pos - categories.begin()));
      s.y.push_back(v[v.size() / 2]);
    }
    chart.series.push_back(std::move(s));
  }
  return chart;
}

}  // namespace

std::vector<std::filesystem::path> emit_plots(const ComparisonTable& table,
                                              std::span<const TraceOverlay> overlays,
                                              const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  const auto emit = [&](const std::string& name, const svg::LineChart& chart) {
    const auto path = dir / name;
    write_text(path, svg::render(chart));
    written.push_back(path);
  };

  {
    std::map<int, std::vector<double>> by_cell;
    for (const auto& row : table.rows) {
      if (row.arch == "LSTMP" && row.h_out == 1) by_cell[row.h_cell].push_back(row.mape_overall_pct);
    }
    svg::LineChart chart;
    chart.title = "MAPE vs hidden size (H_out = 1)";
    chart.x_label = "H_cell";
    chart.y_label = "MAPE (%)";
    svg::Series s;
    s.name = "LSTMP";
    for (const auto& [cell, values] : by_cell) {
      std::vector<double> v = values;
      std::sort(v.begin(), v.end());
      s.x.push_back(static_cast<double>(chart.x_categories.size()));
      s.y.push_back(v[v.size() / 2]);
      chart.x_categories.push_back(std::to_string(cell));
    }
    chart.series.push_back(std::move(s));
    emit("mape_vs_hcell.svg", chart);
  }
  emit("mape_vs_hout.svg", horizon_chart(table, false, "MAPE vs prediction length", "MAPE (%)"));
  emit("params_vs_hout.svg",
       horizon_chart(table, true, "Parameters vs prediction length", "parameters"));

  for (const auto& overlay : overlays) {
    svg::LineChart chart;
    chart.title = "Node " + std::string(to_string(overlay.node)) + ": truth vs prediction";
    chart.x_label = "time (ms)";
    chart.y_label = "sum of currents (uA)";
    svg::Series truth{"truth", {}, overlay.truth};
    svg::Series pred{"prediction", {}, overlay.prediction};
    for (const auto ts : overlay.timestamps_us) {
      const double ms = static_cast<double>(ts) / 1000.0;
      truth.x.push_back(ms);
      pred.x.push_back(ms);
    }
    chart.series = {std::move(truth), std::move(pred)};
    emit("overlay_" + std::string(to_string(overlay.node)) + ".svg", chart);
  }
  return written;
}

}  // namespace energyfc
