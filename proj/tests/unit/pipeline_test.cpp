#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "energyfc/errors.hpp"
#include "energyfc/pipeline.hpp"
#include "test_util.hpp"

namespace energyfc {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

PipelineConfig config_in(const fs::path& root) {
  PipelineConfig c;
  c.paths.raw_dir = root / "raw";
  c.paths.downsampled_dir = root / "down";
  c.paths.runs_dir = root / "runs";
  c.paths.reports_dir = root / "reports";
  c.duration_s = 1.0;
  c.seed = 17;
  c.seq_len = 20;
  c.h_cell = 6;
  c.h_out = 2;
  c.strides = {3, 1};
  c.hyper.batch_size = 32;
  c.hyper.max_epochs = 2;
  c.hyper.learning_rate = 5e-3;
  return c;
}

// One generated and preprocessed dataset shared by the tests below.
class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = test::temp_dir("pipeline");
    const auto c = config_in(root_);
    cmd_generate(c);
    cmd_preprocess(c);
  }
  static fs::path root_;
};
fs::path PipelineTest::root_;

TEST(PipelineConfigParse, DefaultsAndOverrides) {
  const auto c = parse_pipeline_config(R"({
    "seed": 5,
    "paths": {"runs_dir": "out/runs"},
    "synthgen": {"duration_s": 30, "profiles": {"bt": {"sleep_current_ua": 60}}},
    "dataset": {"T": 40, "train_stride": 7, "current_transform": "identity"},
    "model": {"h_cell": 64, "h_out": 10},
    "hyper": {"learning_rate": 0.002, "patience": 3}
  })");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.paths.runs_dir, fs::path("out/runs"));
  EXPECT_EQ(c.paths.raw_dir, fs::path("data/raw"));
  EXPECT_EQ(c.duration_s, 30.0);
  EXPECT_EQ(c.profiles[static_cast<std::size_t>(NodeId::kBt)].sleep_current_ua, 60.0);
  EXPECT_EQ(c.profiles[static_cast<std::size_t>(NodeId::kHr)].sleep_current_ua, 5.0);
  EXPECT_EQ(c.seq_len, 40);
  EXPECT_EQ(c.factor, 100);
  EXPECT_EQ(c.strides.train, 7);
  EXPECT_EQ(c.transform, CurrentTransform::kIdentity);
  EXPECT_EQ(c.network().cell_size, 64);
  EXPECT_EQ(c.network().output_size, 10);
  EXPECT_EQ(c.hyper.learning_rate, 0.002);
  EXPECT_EQ(c.hyper.patience, 3);
  EXPECT_EQ(c.hyper.batch_size, 256);
  EXPECT_NO_THROW(c.validate());
}

TEST(PipelineConfigParse, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(parse_pipeline_config(R"({"sed": 1})"), ConfigError);
  EXPECT_THROW(parse_pipeline_config(R"({"model": {"h_cel": 1}})"), ConfigError);
  EXPECT_THROW(parse_pipeline_config(R"({"dataset": {"T": "fifty"}})"), ConfigError);
  EXPECT_THROW(parse_pipeline_config("{"), ConfigError);
  EXPECT_THROW(load_pipeline_config("/nonexistent/energyfc.json"), ConfigError);
}

TEST(PipelineConfigParse, ConstraintViolationsFailValidation) {
  PipelineConfig c;
  c.h_cell = 32;
  c.h_out = 50;
  EXPECT_THROW(c.validate(), ConfigError);
  c.grid = GridPreset::kPaper;  // the grid plans around invalid entries itself
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.duration_s = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.factor = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PipelineConfigParse, SeedFromEnvironment) {
  PipelineConfig c;
  apply_seed_env(c, nullptr);
  EXPECT_EQ(c.seed, 0u);
  apply_seed_env(c, "1234");
  EXPECT_EQ(c.seed, 1234u);
  EXPECT_THROW(apply_seed_env(c, "12x"), ConfigError);
  EXPECT_THROW(apply_seed_env(c, "-1"), ConfigError);
}

TEST_F(PipelineTest, GenerateWritesFourTracesAndSidecars) {
  for (const char* node : {"central", "hr", "bt", "os"}) {
    EXPECT_TRUE(fs::exists(root_ / "raw" / (std::string(node) + ".csv"))) << node;
    const auto meta = parse_node_meta(slurp(root_ / "raw" / (std::string(node) + ".meta.json")));
    EXPECT_EQ(to_string(meta.node), node);
  }
}

TEST_F(PipelineTest, GenerateAndPreprocessAreRepeatable) {
  const auto other = test::temp_dir("pipeline_repeat");
  const auto c = config_in(other);
  cmd_generate(c);
  const auto outputs = cmd_preprocess(c);
  ASSERT_EQ(outputs.size(), 4u);
  for (const char* name : {"central.csv", "os.csv"}) {
    EXPECT_EQ(slurp(other / "raw" / name), slurp(root_ / "raw" / name));
    EXPECT_EQ(slurp(other / "down" / name), slurp(root_ / "down" / name));
  }
  const std::string before = slurp(other / "down" / "bt.csv");
  cmd_preprocess(c);
  EXPECT_EQ(slurp(other / "down" / "bt.csv"), before);
}

TEST_F(PipelineTest, PreprocessedRowsMatchInMemoryDownsampling) {
  const auto traces = load_downsampled_dir(root_ / "down");
  ASSERT_EQ(traces.size(), 4u);
  const auto c = config_in(root_);
  for (const auto& t : traces) {
    EXPECT_EQ(t.rows.size(), 1000u);
    const auto& profile = c.profiles[static_cast<std::size_t>(t.meta.node)];
    EXPECT_EQ(t.rows, downsample(generate_trace(profile, 1.0, 17)).rows) << to_string(t.meta.node);
  }
}

TEST(PipelineCommands, EmptyRawTraceGivesEmptyOutput) {
  const auto root = test::temp_dir("pipeline_empty");
  auto c = config_in(root);
  fs::create_directories(c.paths.raw_dir);
  std::ofstream(c.paths.raw_dir / "hr.csv") << "timestamp_us,current_ua\n";
  std::ofstream(c.paths.raw_dir / "hr.meta.json") << format_node_meta(default_profile(NodeId::kHr).meta);
  const auto out = cmd_preprocess(c);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(slurp(out[0]), std::string(kDownsampledHeader) + "\n");
}

TEST(PipelineCommands, PreprocessReportsFileAndLine) {
  const auto root = test::temp_dir("pipeline_bad_raw");
  auto c = config_in(root);
  fs::create_directories(c.paths.raw_dir);
  std::ofstream(c.paths.raw_dir / "os.csv") << "timestamp_us,current_ua\n0,1\n10,-2\n";
  std::ofstream(c.paths.raw_dir / "os.meta.json") << format_node_meta(default_profile(NodeId::kOs).meta);
  try {
    cmd_preprocess(c);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(e.source().find("os.csv"), std::string::npos);
  }
}

TEST(PipelineCommands, ZeroDurationIsRejected) {
  auto c = config_in(test::temp_dir("pipeline_zero"));
  c.duration_s = 0.0;
  EXPECT_THROW(cmd_generate(c), ConfigError);
}

TEST_F(PipelineTest, TrainEvalPredictRoundTrip) {
  auto c = config_in(root_);
  const auto runs = cmd_train(c);
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_FALSE(runs[0].resumed);
  const auto id = runs[0].record.id;
  EXPECT_TRUE(cmd_train(c)[0].resumed);

  EvalRequest request;
  request.run_ids = {id};
  request.store_and_copy = true;
  const auto out = cmd_eval(c, request);
  ASSERT_EQ(out.reports.size(), 2u);
  EXPECT_EQ(out.reports[1].label, "STORE_COPY");
  EXPECT_TRUE(fs::exists(c.paths.reports_dir / "report.csv"));
  EXPECT_TRUE(fs::exists(c.paths.reports_dir / "overlay_central.svg"));
  EXPECT_NE(slurp(c.paths.reports_dir / "report.csv").find("STORE_COPY"), std::string::npos);
  EXPECT_EQ(out.reports[0].parameter_count, count_parameters(c.network()));

  // Predicting through the CLI path reproduces the report's per-node MAPE.
  const NodeId node = NodeId::kOs;
  const auto ckpt = c.paths.runs_dir / id / "checkpoint";
  const auto data = c.paths.downsampled_dir / "os.csv";
  const auto traces = load_downsampled_dir(c.paths.downsampled_dir);
  const auto& rows = traces[static_cast<std::size_t>(3)].rows;  // file-name order: bt, central, hr, os
  ASSERT_EQ(traces[3].meta.node, node);
  const std::size_t test_start = rows.size() - split_70_15_15(traces[3]).test.rows.size();
  MapeAccumulator acc;
  for (std::size_t r = test_start + 20; r + 2 <= rows.size(); ++r) {
    const auto p = cmd_predict({ckpt, data, rows[r].timestamp_us, std::nullopt});
    ASSERT_EQ(p.sum_current_ua.size(), 2u);
    EXPECT_EQ(p.timestamps_us[0], rows[r].timestamp_us);
    EXPECT_EQ(p.timestamps_us[1], rows[r + 1].timestamp_us);
    acc.add(rows[r].sum_current_ua, p.sum_current_ua[0]);
    acc.add(rows[r + 1].sum_current_ua, p.sum_current_ua[1]);
  }
  EXPECT_NEAR(acc.percent(), out.reports[0].per_node_mape_pct.at(node),
              1e-9 * acc.percent());
}

TEST_F(PipelineTest, EvalMissingCheckpointNamesPath) {
  auto c = config_in(root_);
  fs::create_directories(c.paths.runs_dir / "deadbeef");
  EvalRequest request;
  request.run_ids = {"deadbeef"};
  try {
    cmd_eval(c, request);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("deadbeef"), std::string::npos) << e.what();
  }
}

TEST_F(PipelineTest, StoreAndCopyOnlyEvaluation) {
  auto c = config_in(root_);
  c.paths.reports_dir = root_ / "reports_sc";
  EvalRequest request;
  request.store_and_copy = true;
  request.window = 50;
  const auto out = cmd_eval(c, request);
  ASSERT_EQ(out.table.rows.size(), 1u);
  EXPECT_EQ(out.table.rows[0].arch, "STORE_COPY");
  EXPECT_EQ(out.table.rows[0].t, 50);
  request.store_and_copy = false;
  EXPECT_THROW(cmd_eval(c, request), ConfigError);
}

TEST_F(PipelineTest, PredictErrors) {
  auto c = config_in(root_);
  c.seq_len = 20;
  c.h_cell = 4;
  c.h_out = 1;
  c.hyper.max_epochs = 1;
  const auto id = cmd_train(c)[0].record.id;
  const auto ckpt = c.paths.runs_dir / id / "checkpoint";
  const auto data = c.paths.downsampled_dir / "hr.csv";
  const auto rows = load_downsampled_dir(c.paths.downsampled_dir)[2].rows;

  EXPECT_THROW(cmd_predict({ckpt, data, rows[19].timestamp_us, std::nullopt}), DataError);
  const auto ok = cmd_predict({ckpt, data, rows[20].timestamp_us, std::nullopt});
  EXPECT_EQ(ok.sum_current_ua.size(), 1u);
  EXPECT_EQ(ok.node, NodeId::kHr);
  EXPECT_THROW(cmd_predict({ckpt, data, rows.back().timestamp_us + 10'000, std::nullopt}), DataError);
  EXPECT_THROW(cmd_predict({root_ / "nope", data, rows[30].timestamp_us, std::nullopt}), IoError);

  // A CSV holding several nodes needs --node.
  const auto both = root_ / "both.csv";
  {
    std::ofstream out(both);
    const auto traces = load_downsampled_dir(c.paths.downsampled_dir);
    write_downsampled_csv(out, traces);
  }
  EXPECT_THROW(cmd_predict({ckpt, both, rows[30].timestamp_us, std::nullopt}), ConfigError);
  const auto picked = cmd_predict({ckpt, both, rows[30].timestamp_us, NodeId::kHr});
  const auto single = cmd_predict({ckpt, data, rows[30].timestamp_us, std::nullopt});
  EXPECT_EQ(picked.sum_current_ua, single.sum_current_ua);
}

#ifdef ENERGYFC_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(ENERGYFC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(PipelineTest, CliExitCodes) {
  const std::string dirs = " --data-dir " + (root_ / "down").string() + " --runs-dir " +
                           (root_ / "cli_runs").string();
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("train --h-cell 32 --h-out 50" + dirs), 1);
  EXPECT_EQ(run_cli("train --grid paper --h-cell 32" + dirs), 1);
  EXPECT_EQ(run_cli("eval missing_run --data-dir " + (root_ / "down").string() + " --runs-dir " +
                    (root_ / "cli_runs").string()),
            2);
  EXPECT_EQ(run_cli("predict --checkpoint /nonexistent --data /nonexistent --at 5"), 2);
  EXPECT_EQ(run_cli("train --T 20 --h-cell 4 --h-out 1 --epochs 2 --batch 32 --lr 1e300 "
                    "--train-stride 5" + dirs),
            3);
  EXPECT_EQ(run_cli("--seed 3 train --T 20 --h-cell 4 --h-out 1 --epochs 1 --batch 64 "
                    "--train-stride 9 --eval-stride 9" + dirs),
            0);
}

TEST(Cli, GenerateHonoursSeedEnvironment) {
  const auto root = test::temp_dir("cli_seed");
  const auto gen = [&](const std::string& sub, const std::string& prefix) {
    return run_cli(prefix + "generate --duration 0.1 --raw-dir " + (root / sub).string());
  };
  ASSERT_EQ(setenv("ENERGYFC_SEED", "99", 1), 0);
  EXPECT_EQ(gen("env", ""), 0);
  unsetenv("ENERGYFC_SEED");
  EXPECT_EQ(gen("flag", "--seed 99 "), 0);
  EXPECT_EQ(gen("other", "--seed 98 "), 0);
  EXPECT_EQ(slurp(root / "env" / "hr.csv"), slurp(root / "flag" / "hr.csv"));
  EXPECT_NE(slurp(root / "env" / "hr.csv"), slurp(root / "other" / "hr.csv"));
}
#endif

}  // namespace
}  // namespace energyfc
