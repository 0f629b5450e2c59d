#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "energyfc/errors.hpp"
#include "energyfc/evaluation.hpp"
#include "energyfc/svg.hpp"
#include "energyfc/synthgen.hpp"
#include "test_util.hpp"

namespace energyfc {
namespace {

// Forecaster that returns the true targets, optionally scaled per node.
class OracleForecaster : public Forecaster {
 public:
  OracleForecaster(int t, int h, std::array<double, 4> scale = {1, 1, 1, 1})
      : t_(t), h_(h), scale_(scale) {}
  int seq_len() const override { return t_; }
  int horizon() const override { return h_; }
  Eigen::MatrixXd predict(const WindowSet& set, std::span<const std::size_t> idx) const override {
    Eigen::MatrixXd inputs, targets;
    set.gather(idx, inputs, targets);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      targets.row(static_cast<Eigen::Index>(b)) *= scale_[static_cast<std::size_t>(set.node(idx[b]))];
    }
    return targets;
  }

 private:
  int t_, h_;
  std::array<double, 4> scale_;
};

WindowSet windows_over(const std::vector<DownsampledTrace>& traces, int t, int h) {
  const auto norm = fit_normalizer(traces);
  WindowSet set(t, h);
  for (const auto& trace : traces) set.add_series(encode_series(trace, norm));
  return set;
}

DownsampledTrace trace_of(NodeId node, std::vector<double> sums) {
  DownsampledTrace t;
  t.meta = default_profile(node).meta;
  for (std::size_t k = 0; k < sums.size(); ++k) {
    t.rows.push_back({static_cast<std::int64_t>(k) * 1000, sums[k], sums[k]});
  }
  return t;
}

EvalReport report(std::string label, int h_cell, int h_out, std::size_t params, double mape_pct) {
  EvalReport r;
  r.label = std::move(label);
  r.config.cell_size = h_cell;
  r.config.output_size = h_out;
  r.parameter_count = params;
  r.overall_mape_pct = mape_pct;
  return r;
}

TEST(Mape, Examples) {
  const std::vector<double> y = {100.0, 200.0};
  EXPECT_EQ(mape(y, y), 0.0);
  EXPECT_DOUBLE_EQ(mape(y, std::vector<double>{110.0, 180.0}), 10.0);
  const double guard = mape(std::vector<double>{0.0}, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(guard, 1e8 * 100.0);
  EXPECT_TRUE(std::isfinite(guard));
}

TEST(Mape, Errors) {
  EXPECT_THROW(mape(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ShapeError);
  EXPECT_THROW(mape(std::vector<double>{}, std::vector<double>{}), DataError);
}

TEST(Mape, ScaleInvariantOnPositiveFixtures) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1.0, 1000.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> y(50), yh(50), ky(50), kyh(50);
    const double k = std::pow(2.0, trial % 7 - 3);  // powers of two keep the scaling exact
    for (int i = 0; i < 50; ++i) {
      y[i] = u(rng);
      yh[i] = u(rng);
      ky[i] = k * y[i];
      kyh[i] = k * yh[i];
    }
    EXPECT_EQ(mape(ky, kyh), mape(y, yh));
    EXPECT_GT(mape(y, yh), 0.0);
  }
}

TEST(Evaluate, PerfectForecasterScoresZero) {
  const auto traces = test::tiny_dataset(0.3);
  const auto set = windows_over(traces, 20, 3);
  const auto r = evaluate(OracleForecaster(20, 3), set, 37);
  EXPECT_EQ(r.overall_mape_pct, 0.0);
  ASSERT_EQ(r.per_node_mape_pct.size(), 4u);
  for (const auto& [node, m] : r.per_node_mape_pct) EXPECT_EQ(m, 0.0);
  EXPECT_EQ(r.n_samples, set.size());
  EXPECT_EQ(r.n_terms, set.size() * 3);
}

TEST(Evaluate, OverallIsTermWeightedMeanOfNodes) {
  std::vector<DownsampledTrace> traces;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(10.0, 5000.0);
  const std::array<std::size_t, 4> lengths = {90, 140, 65, 200};
  for (const NodeId n : kAllNodes) {
    std::vector<double> sums(lengths[static_cast<std::size_t>(n)]);
    for (auto& s : sums) s = u(rng);
    traces.push_back(trace_of(n, sums));
  }
  const auto set = windows_over(traces, 10, 4);
  const auto r = evaluate(OracleForecaster(10, 4, {1.1, 0.7, 1.02, 1.5}), set);
  double weighted = 0.0;
  std::size_t terms = 0;
  for (const auto& [node, m] : r.per_node_mape_pct) {
    weighted += m * static_cast<double>(r.per_node_terms.at(node));
    terms += r.per_node_terms.at(node);
  }
  EXPECT_EQ(terms, r.n_terms);
  EXPECT_NEAR(weighted / static_cast<double>(terms), r.overall_mape_pct, 1e-12 * r.overall_mape_pct);
  EXPECT_NEAR(r.per_node_mape_pct.at(NodeId::kOs), 50.0, 1e-9);
  EXPECT_NEAR(r.per_node_mape_pct.at(NodeId::kCentral), 10.0, 1e-9);
}

TEST(Evaluate, ShapeMismatch) {
  const auto set = windows_over(test::tiny_dataset(0.2), 20, 3);
  EXPECT_THROW(evaluate(OracleForecaster(20, 2), set), ShapeError);
  EXPECT_THROW(evaluate(OracleForecaster(10, 3), set), ShapeError);

  Checkpoint ck;
  ck.config = test::small_config(10, 4, 2, 20);
  ck.params = NetworkParams::zeros(ck.config);
  ck.norm = fit_normalizer(test::tiny_dataset(0.2));
  EXPECT_THROW(evaluate_model(ck, set), ShapeError);
  ck.config = test::small_config(5, 4, 3, 20);
  ck.params = NetworkParams::zeros(ck.config);
  EXPECT_THROW(evaluate_model(ck, set), ShapeError);
}

TEST(Evaluate, NetworkForecasterDecodesToRawScale) {
  const auto traces = test::tiny_dataset(0.2);
  const auto set = windows_over(traces, 20, 2);
  Checkpoint ck;
  ck.config = test::small_config(10, 4, 2, 20);
  ck.params = NetworkParams::zeros(ck.config);  // predicts z = 0 everywhere
  ck.norm = fit_normalizer(traces);
  const auto r = evaluate_model(ck, set);
  EXPECT_EQ(r.label, "LSTMP");
  EXPECT_EQ(r.parameter_count, count_parameters(ck.config));
  const NetworkForecaster f(ck);
  const std::vector<std::size_t> idx = {0, 5};
  const auto pred = f.predict(set, idx);
  EXPECT_NEAR(pred(0, 0), ck.norm.decode_sum(0.0), 1e-9);
  EXPECT_NEAR(pred(1, 1), ck.norm.decode_sum(0.0), 1e-9);
}

TEST(StoreAndCopy, MatchesIndexShiftOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(1.0, 10.0);
  std::vector<DownsampledRow> rows(300);
  for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = {static_cast<std::int64_t>(k), u(rng), 0};
  for (const int w : {1, 49, 50, 299}) {
    const auto pred = store_and_copy_predict(rows, w);
    ASSERT_EQ(pred.size(), rows.size() - w);
    for (std::size_t t = w; t < rows.size(); ++t) {
      EXPECT_EQ(pred[t - w], rows[t - w].sum_current_ua);
    }
  }
}

TEST(StoreAndCopy, ConstantAndPeriodicTraces) {
  const auto flat = trace_of(NodeId::kHr, std::vector<double>(200, 42.0));
  for (const int w : {1, 7, 50}) {
    EXPECT_EQ(store_and_copy_report(std::vector{flat}, w).overall_mape_pct, 0.0);
  }
  NodeProfile p = default_profile(NodeId::kHr);
  p.noise_stddev_fraction = 0.0;
  p.jitter = false;
  p.transmission_interval_s = 0.0;
  const std::vector<DownsampledTrace> periodic = {downsample(generate_trace(p, 2.0, 1))};
  EXPECT_EQ(store_and_copy_report(periodic, 50).overall_mape_pct, 0.0);
  EXPECT_GT(store_and_copy_report(periodic, 49).overall_mape_pct, 5.0);
}

TEST(StoreAndCopy, Errors) {
  const auto t = trace_of(NodeId::kHr, std::vector<double>(50, 1.0));
  EXPECT_THROW(store_and_copy_predict(t.rows, 0), ConfigError);
  EXPECT_THROW(store_and_copy_predict(t.rows, -3), ConfigError);
  EXPECT_THROW(store_and_copy_predict(t.rows, 50), DataError);
}

TEST(StoreAndCopy, ReportIsLabelled) {
  const auto r = store_and_copy_report(test::tiny_dataset(0.3), 50);
  EXPECT_EQ(r.label, "STORE_COPY");
  EXPECT_EQ(r.per_node_mape_pct.size(), 4u);
  EXPECT_EQ(r.n_terms, 4u * 250u);
}

TEST(CompareReport, SortsAndComputesRatios) {
  const auto lstmp = test::small_config(10, 32, 1, 50);
  const auto base = test::small_config(10, 64, 1, 50, Arch::kLstmBaseline);
  std::vector<EvalReport> reports = {
      report("LSTMP", 64, 10, count_parameters(test::small_config(10, 64, 10, 50)), 14.0),
      report("LSTM_BASELINE", 64, 1, count_parameters(base), 12.0),
      report("LSTMP", 32, 1, count_parameters(lstmp), 13.0),
  };
  reports[2].per_node_mape_pct[NodeId::kBt] = 3.5;
  const auto table = compare_report(reports);
  ASSERT_EQ(table.rows.size(), 3u);
  EXPECT_EQ(table.rows[0].arch, "LSTMP");
  EXPECT_EQ(table.rows[0].h_cell, 32);
  EXPECT_EQ(table.rows[0].params, 1984u);
  EXPECT_EQ(table.rows[1].h_cell, 64);
  EXPECT_EQ(table.rows[2].arch, "LSTM_BASELINE");
  ASSERT_TRUE(table.rows[0].param_ratio.has_value());
  EXPECT_GE(*table.rows[0].param_ratio, 4.0);
  EXPECT_DOUBLE_EQ(*table.rows[2].param_ratio, 1.0);

  const std::string csv = comparison_csv(table);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kReportHeader);
  std::istringstream lines(csv);
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  EXPECT_NE(first.find("1984"), std::string::npos);
  EXPECT_NE(first.find("n/a"), std::string::npos);
  EXPECT_NE(first.find("3.5000"), std::string::npos);
  const auto json = comparison_json(table);
  EXPECT_NE(json.find("1984"), std::string::npos);
}

TEST(CompareReport, NoBaselineMeansNoRatio) {
  const std::vector<EvalReport> reports = {report("LSTMP", 32, 1, 1984, 10.0)};
  const auto table = compare_report(reports);
  EXPECT_FALSE(table.baseline_row.has_value());
  EXPECT_FALSE(table.rows[0].param_ratio.has_value());
  EXPECT_TRUE(compare_report(std::vector<EvalReport>{}).rows.empty());
}

class PlotTest : public ::testing::Test {
 protected:
  ComparisonTable table() const {
    std::vector<EvalReport> reports;
    for (const int cell : {2, 8, 32}) reports.push_back(report("LSTMP", cell, 1, 100 * cell, 40.0 / cell));
    for (const int out : {1, 10, 50}) reports.push_back(report("LSTMP", 64, out, 5000 + out, 5.0 + out));
    return compare_report(reports);
  }
  std::vector<TraceOverlay> overlays() const {
    std::vector<TraceOverlay> out;
    for (const NodeId n : kAllNodes) {
      TraceOverlay o;
      o.node = n;
      for (int k = 0; k < 30; ++k) {
        o.timestamps_us.push_back(k * 1000);
        o.truth.push_back(100.0 + k);
        o.prediction.push_back(90.0 + 2 * k);
      }
      out.push_back(o);
    }
    return out;
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST_F(PlotTest, WritesChartsAndOneOverlayPerNode) {
  const auto dir = test::temp_dir("plots");
  const auto files = emit_plots(table(), overlays(), dir);
  EXPECT_EQ(files.size(), 7u);
  int overlay_files = 0;
  for (const auto& f : files) {
    ASSERT_TRUE(std::filesystem::exists(f)) << f;
    if (f.filename().string().starts_with("overlay_")) ++overlay_files;
    EXPECT_NE(slurp(f).find("<svg"), std::string::npos);
  }
  EXPECT_EQ(overlay_files, 4);
  EXPECT_TRUE(std::filesystem::exists(dir / "mape_vs_hcell.svg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "overlay_bt.svg"));
}

TEST_F(PlotTest, OutputIsDeterministic) {
  const auto a = test::temp_dir("plots_a");
  const auto b = test::temp_dir("plots_b");
  const auto fa = emit_plots(table(), overlays(), a);
  const auto fb = emit_plots(table(), overlays(), b);
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t k = 0; k < fa.size(); ++k) EXPECT_EQ(slurp(fa[k]), slurp(fb[k]));
}

TEST_F(PlotTest, UnwritableDirectoryNamesPath) {
  const auto dir = test::temp_dir("plots_blocked");
  std::ofstream(dir / "file") << "x";
  try {
    emit_plots(table(), overlays(), dir / "file" / "sub");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("file"), std::string::npos);
  }
}

TEST(PaddedRange, FivePercentMargins) {
  const std::vector<double> v = {3.0, -1.0, 7.0};
  const auto r = svg::padded_range(v);
  EXPECT_DOUBLE_EQ(r.lo, -1.0 - 0.4);
  EXPECT_DOUBLE_EQ(r.hi, 7.0 + 0.4);
  const auto flat = svg::padded_range(std::vector<double>{5.0, 5.0});
  EXPECT_LT(flat.lo, 5.0);
  EXPECT_GT(flat.hi, 5.0);
}

}  // namespace
}  // namespace energyfc
