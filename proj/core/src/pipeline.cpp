#include "energyfc/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "energyfc/checkpoint.hpp"
#include "energyfc/errors.hpp"

namespace energyfc {

namespace fs = std::filesystem;

namespace {

using json = nlohmann::json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

// Reads `key` from object `j` into `out` when present, checking the type.
template <typename T>
void take(const json& j, std::string_view key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + std::string(key) + ": wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

void apply_profile(const json& j, NodeProfile& p, const std::string& where) {
  reject_unknown(j,
                 {"connection_interval_ms", "event_offsets_ms", "anchor_offset_ms",
                  "event_duration_ms", "duration_jitter_ms", "duration_jitter_stddev_ms",
                  "sleep_current_ua", "event_plateau_current_ua", "plateau_jitter_sigma",
                  "peak_current_max_ua", "peak_min_fraction", "transmission_interval_s",
                  "noise_stddev_fraction", "jitter", "seed", "transmission_rate_pps",
                  "packet_size_b"},
                 where);
  take(j, "connection_interval_ms", p.connection_interval_ms, where);
  take(j, "event_offsets_ms", p.event_offsets_ms, where);
  take(j, "anchor_offset_ms", p.anchor_offset_ms, where);
  take(j, "event_duration_ms", p.event_duration_ms, where);
  take(j, "duration_jitter_ms", p.duration_jitter_ms, where);
  take(j, "duration_jitter_stddev_ms", p.duration_jitter_stddev_ms, where);
  take(j, "sleep_current_ua", p.sleep_current_ua, where);
  take(j, "event_plateau_current_ua", p.event_plateau_current_ua, where);
  take(j, "plateau_jitter_sigma", p.plateau_jitter_sigma, where);
  take(j, "peak_current_max_ua", p.peak_current_max_ua, where);
  take(j, "peak_min_fraction", p.peak_min_fraction, where);
  take(j, "transmission_interval_s", p.transmission_interval_s, where);
  take(j, "noise_stddev_fraction", p.noise_stddev_fraction, where);
  take(j, "jitter", p.jitter, where);
  take(j, "seed", p.seed, where);
  take(j, "transmission_rate_pps", p.meta.transmission_rate_pps, where);
  take(j, "packet_size_b", p.meta.packet_size_b, where);
}

std::vector<fs::path> files_with_suffix(const fs::path& dir, std::string_view suffix) {
  if (!fs::is_directory(dir)) throw IoError("no such directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.ends_with(suffix)) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  if (seq_len < 1) throw ConfigError("dataset.T must be >= 1");
  if (factor < 1) throw ConfigError("dataset.factor must be >= 1");
  if (strides.train < 1 || strides.eval < 1) throw ConfigError("window strides must be >= 1");
  if (!(duration_s > 0.0)) throw ConfigError("synthgen.duration_s must be > 0");
  for (const auto& p : profiles) p.validate();
  hyper.validate();
  if (!grid) network().validate();
}

NetworkConfig PipelineConfig::network() const {
  NetworkConfig c;
  c.arch = arch;
  c.seq_len = seq_len;
  c.input_size = kFeatureCount;
  c.cell_size = h_cell;
  c.output_size = h_out;
  c.num_layers = 2;
  return c;
}

PipelineConfig parse_pipeline_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  reject_unknown(doc, {"seed", "paths", "synthgen", "dataset", "model", "hyper"}, "config");
  take(doc, "seed", c.seed, "config");

  if (const auto it = doc.find("paths"); it != doc.end()) {
    reject_unknown(*it, {"raw_dir", "downsampled_dir", "runs_dir", "reports_dir"}, "paths");
    std::string s;
    const auto path = [&](std::string_view key, fs::path& out) {
      s.clear();
      take(*it, key, s, "paths");
      if (!s.empty()) out = s;
    };
    path("raw_dir", c.paths.raw_dir);
    path("downsampled_dir", c.paths.downsampled_dir);
    path("runs_dir", c.paths.runs_dir);
    path("reports_dir", c.paths.reports_dir);
  }

  if (const auto it = doc.find("synthgen"); it != doc.end()) {
    reject_unknown(*it, {"duration_s", "profiles"}, "synthgen");
    take(*it, "duration_s", c.duration_s, "synthgen");
    if (const auto pit = it->find("profiles"); pit != it->end()) {
      reject_unknown(*pit, {"central", "hr", "bt", "os"}, "synthgen.profiles");
      for (const auto& [name, overrides] : pit->items()) {
        const NodeId node = node_from_string(name);
        apply_profile(overrides, c.profiles[static_cast<std::size_t>(node)],
                      "synthgen.profiles." + name);
      }
    }
  }

  if (const auto it = doc.find("dataset"); it != doc.end()) {
    reject_unknown(*it, {"T", "factor", "train_stride", "eval_stride", "current_transform"},
                   "dataset");
    take(*it, "T", c.seq_len, "dataset");
    take(*it, "factor", c.factor, "dataset");
    take(*it, "train_stride", c.strides.train, "dataset");
    take(*it, "eval_stride", c.strides.eval, "dataset");
    std::string transform;
    take(*it, "current_transform", transform, "dataset");
    if (!transform.empty()) c.transform = transform_from_string(transform);
  }

  if (const auto it = doc.find("model"); it != doc.end()) {
    reject_unknown(*it, {"arch", "h_cell", "h_out", "grid"}, "model");
    std::string arch;
    take(*it, "arch", arch, "model");
    if (!arch.empty()) c.arch = arch_from_string(arch);
    take(*it, "h_cell", c.h_cell, "model");
    take(*it, "h_out", c.h_out, "model");
    std::string grid;
    take(*it, "grid", grid, "model");
    if (!grid.empty()) c.grid = grid_preset_from_string(grid);
  }

  if (const auto it = doc.find("hyper"); it != doc.end()) {
    reject_unknown(*it,
                   {"learning_rate", "beta1", "beta2", "adam_eps", "batch_size", "max_epochs",
                    "patience", "clip_norm"},
                   "hyper");
    take(*it, "learning_rate", c.hyper.learning_rate, "hyper");
    take(*it, "beta1", c.hyper.beta1, "hyper");
    take(*it, "beta2", c.hyper.beta2, "hyper");
    take(*it, "adam_eps", c.hyper.adam_eps, "hyper");
    take(*it, "batch_size", c.hyper.batch_size, "hyper");
    take(*it, "max_epochs", c.hyper.max_epochs, "hyper");
    take(*it, "patience", c.hyper.patience, "hyper");
    take(*it, "clip_norm", c.hyper.clip_norm, "hyper");
  }
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse_pipeline_config(text);
}

void apply_seed_env(PipelineConfig& config, const char* value) {
  if (value == nullptr || *value == '\0') return;
  const std::string_view s(value);
  std::uint64_t seed = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("ENERGYFC_SEED must be an unsigned integer, got '" + std::string(s) + "'");
  }
  config.seed = seed;
}

std::vector<fs::path> cmd_generate(const PipelineConfig& config) {
  config.validate();
  ensure_dir(config.paths.raw_dir);
  std::vector<fs::path> written;
  for (const auto& profile : config.profiles) {
    const RawTrace trace = generate_trace(profile, config.duration_s, config.seed);
    const std::string node(to_string(profile.meta.node));

    const auto csv_path = config.paths.raw_dir / (node + ".csv");
    auto csv = open_out(csv_path);
    write_raw_trace(csv, trace);
    finish(csv, csv_path);

    const auto meta_path = config.paths.raw_dir / (node + ".meta.json");
    auto meta = open_out(meta_path);
    meta << format_node_meta(profile.meta);
    finish(meta, meta_path);

    spdlog::info("wrote {} ({} samples)", csv_path.string(), trace.currents_ua.size());
    written.push_back(csv_path);
    written.push_back(meta_path);
  }
  return written;
}

std::vector<fs::path> cmd_preprocess(const PipelineConfig& config) {
  if (config.factor < 1) throw ConfigError("dataset.factor must be >= 1");
  const auto metas = files_with_suffix(config.paths.raw_dir, ".meta.json");
  if (metas.empty()) throw DataError("no *.meta.json sidecars in " + config.paths.raw_dir.string());
  ensure_dir(config.paths.downsampled_dir);

  std::vector<fs::path> written;
  for (const auto& meta_path : metas) {
    const NodeMeta meta = parse_node_meta(read_text(meta_path));
    const std::string node(to_string(meta.node));
    const auto csv_path = config.paths.raw_dir / (node + ".csv");
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + csv_path.string());
    const RawParseResult raw = parse_raw_trace(in, meta, csv_path.string());
    if (raw.rejected_trailing_lines > 0) {
      spdlog::warn("{}: dropped {} partial trailing line(s)", csv_path.string(),
                   raw.rejected_trailing_lines);
    }
    const DownsampledTrace down = downsample(raw.trace, config.factor);
    if (down.rows.empty()) spdlog::warn("{}: no complete blocks, output is empty", csv_path.string());

    const auto out_path = config.paths.downsampled_dir / (node + ".csv");
    auto out = open_out(out_path);
    write_downsampled_csv(out, std::span<const DownsampledTrace>(&down, 1));
    finish(out, out_path);
    spdlog::info("wrote {} ({} rows)", out_path.string(), down.rows.size());
    written.push_back(out_path);
  }
  return written;
}

std::vector<DownsampledTrace> load_downsampled_dir(const fs::path& dir) {
  std::vector<DownsampledTrace> traces;
  for (const auto& path : files_with_suffix(dir, ".csv")) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    for (auto& t : read_downsampled_csv(in, path.string())) {
      if (!t.rows.empty()) traces.push_back(std::move(t));
    }
  }
  if (traces.empty()) throw DataError("no downsampled rows found in " + dir.string());
  return traces;
}

std::vector<GridRunResult> cmd_train(const PipelineConfig& config) {
  config.validate();
  const auto traces = load_downsampled_dir(config.paths.downsampled_dir);
  ensure_dir(config.paths.runs_dir);

  if (config.grid) {
    const auto entries = grid_entries(*config.grid);
    const GridPlan plan = plan_grid(entries, config.seq_len, kFeatureCount);
    spdlog::info("grid: {} runs, {} skipped", plan.runs.size(), plan.skipped.size());
    return run_grid(plan, traces, config.hyper, config.paths.runs_dir, config.seq_len,
                    config.strides);
  }

  const NetworkConfig network = config.network();
  Hyperparams hp = config.hyper;
  hp.seed = config.seed;
  const DatasetSplits splits =
      prepare_splits(traces, config.seq_len, config.h_out, config.strides, config.transform);
  const std::string id = run_id(network, hp, splits.dataset_hash, config.strides);
  const auto dir = config.paths.runs_dir / id;
  PlannedRun planned{{config.arch, config.h_cell, config.h_out}, 0};
  if (auto existing = read_run(dir); existing && existing->id == id) {
    spdlog::info("run {} already complete", id);
    return {GridRunResult{planned, std::move(*existing), true}};
  }
  RunRecord record{id, dir, splits.dataset_hash, config.strides, train(network, splits, hp)};
  write_run(record);
  return {GridRunResult{planned, std::move(record), false}};
}

EvalOutput cmd_eval(const PipelineConfig& config, const EvalRequest& request) {
  std::vector<fs::path> dirs;
  if (request.all) {
    if (!fs::is_directory(config.paths.runs_dir)) {
      throw IoError("no such directory: " + config.paths.runs_dir.string());
    }
    for (const auto& entry : fs::directory_iterator(config.paths.runs_dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "run.meta")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
  }
  for (const auto& id : request.run_ids) dirs.push_back(config.paths.runs_dir / id);
  if (dirs.empty() && !request.store_and_copy) {
    throw ConfigError("nothing to evaluate: give run ids, --all or --store-and-copy");
  }

  const auto traces = load_downsampled_dir(config.paths.downsampled_dir);
  const std::string dataset_hash = dataset_fingerprint(traces);

  EvalOutput out;
  std::optional<Checkpoint> overlay_model;
  double overlay_mape = std::numeric_limits<double>::infinity();
  for (const auto& dir : dirs) {
    Checkpoint checkpoint = read_checkpoint_file(dir / "checkpoint");
    const auto record = read_run(dir);
    const WindowSet test = prepare_test_windows(traces, checkpoint.norm, checkpoint.config.seq_len,
                                                checkpoint.config.output_size, config.strides.eval);
    EvalReport report = evaluate_model(checkpoint, test);
    report.seed = record ? record->run.hyper.seed : config.seed;
    report.dataset_hash = dataset_hash;
    spdlog::info("{}: {} H_cell={} H_out={} test MAPE {:.3f}%", dir.filename().string(),
                 report.label, report.config.cell_size, report.config.output_size,
                 report.overall_mape_pct);
    if (report.overall_mape_pct < overlay_mape) {
      overlay_mape = report.overall_mape_pct;
      overlay_model = std::move(checkpoint);
    }
    out.reports.push_back(std::move(report));
  }

  if (request.store_and_copy) {
    std::vector<DownsampledTrace> tests;
    for (const auto& t : traces) tests.push_back(split_70_15_15(t).test);
    EvalReport report = store_and_copy_report(tests, request.window);
    report.seed = config.seed;
    report.dataset_hash = dataset_hash;
    spdlog::info("store-and-copy w={}: MAPE {:.3f}%", request.window, report.overall_mape_pct);
    out.reports.push_back(std::move(report));
  }

  out.table = compare_report(out.reports);
  ensure_dir(config.paths.reports_dir);
  const auto write = [&](const std::string& name, const std::string& text) {
    const auto path = config.paths.reports_dir / name;
    auto f = open_out(path);
    f << text;
    finish(f, path);
    out.files.push_back(path);
  };
  write("report.csv", comparison_csv(out.table));
  write("report.json", comparison_json(out.table));

  std::vector<TraceOverlay> overlays;
  if (overlay_model) {
    const NetworkForecaster model(*overlay_model);
    const WindowSet windows = prepare_test_windows(traces, overlay_model->norm, model.seq_len(),
                                                   model.horizon(), 1);
    std::set<NodeId> seen;
    for (const auto& t : traces) {
      if (!seen.insert(t.meta.node).second) continue;
      TraceOverlay overlay = make_overlay(model, windows, t.meta.node, request.overlay_length);
      if (!overlay.truth.empty()) overlays.push_back(std::move(overlay));
    }
  }
  for (auto& p : emit_plots(out.table, overlays, config.paths.reports_dir)) {
    out.files.push_back(std::move(p));
  }
  return out;
}

Prediction cmd_predict(const PredictRequest& request) {
  const Checkpoint checkpoint = read_checkpoint_file(request.checkpoint);
  std::ifstream in(request.data, std::ios::binary);
  if (!in) throw IoError("cannot open " + request.data.string());
  const auto traces = read_downsampled_csv(in, request.data.string());

  const DownsampledTrace* trace = nullptr;
  if (request.node) {
    for (const auto& t : traces) {
      if (t.meta.node == *request.node) trace = &t;
    }
    if (trace == nullptr) {
      throw DataError(request.data.string() + " has no rows for node " +
                      std::string(to_string(*request.node)));
    }
  } else {
    if (traces.size() != 1) {
      throw ConfigError(request.data.string() + " holds " + std::to_string(traces.size()) +
                        " nodes; choose one with --node");
    }
    trace = &traces.front();
  }

  const auto& rows = trace->rows;
  const int T = checkpoint.config.seq_len;
  if (rows.empty()) throw DataError(request.data.string() + " has no rows");
  const std::int64_t pitch = rows.size() > 1 ? rows[1].timestamp_us - rows[0].timestamp_us : 1000;
  if (request.at_us > rows.back().timestamp_us + pitch) {
    throw DataError("timestamp " + std::to_string(request.at_us) + " lies beyond the data");
  }
  const auto it = std::lower_bound(
      rows.begin(), rows.end(), request.at_us,
      [](const DownsampledRow& r, std::int64_t ts) { return r.timestamp_us < ts; });
  const auto before = static_cast<std::size_t>(it - rows.begin());
  if (before < static_cast<std::size_t>(T)) {
    throw DataError("only " + std::to_string(before) + " rows precede timestamp " +
                    std::to_string(request.at_us) + ", need T=" + std::to_string(T));
  }

  Eigen::MatrixXd window(T, checkpoint.config.input_size);
  for (int t = 0; t < T; ++t) {
    const auto& row = rows[before - static_cast<std::size_t>(T) + static_cast<std::size_t>(t)];
    window.row(t) = encode_row(row, trace->meta, checkpoint.norm).transpose();
  }
  const NetworkForecaster model(checkpoint);
  const Eigen::VectorXd y = model.predict_window(window);

  Prediction out;
  out.node = trace->meta.node;
  const std::int64_t first = rows[before - 1].timestamp_us + pitch;
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    out.timestamps_us.push_back(first + k * pitch);
    out.sum_current_ua.push_back(y(k));
  }
  return out;
}

}  // namespace energyfc
