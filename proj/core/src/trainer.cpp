#include "energyfc/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "energyfc/errors.hpp"
#include "energyfc/evaluation.hpp"
#include "text_format.hpp"

namespace energyfc {

namespace {

using json = nlohmann::ordered_json;

std::size_t add_split(WindowSet& set, const DownsampledTrace& rows, const NormStats& norm,
                      int stride, std::string_view split) {
  const std::size_t added = set.add_series(encode_series(rows, norm), stride);
  if (added == 0) {
    spdlog::warn("{} split of node {} has {} rows; no windows of T={} + H_out={}", split,
                 to_string(rows.meta.node), rows.rows.size(), set.seq_len(), set.horizon());
  }
  return added;
}

struct ValStats {
  double loss = 0.0;
  double mape_pct = 0.0;
};

ValStats validation_pass(const NetworkConfig& config, const NetworkParams& params,
                         const NormStats& norm, const WindowSet& val) {
  MapeAccumulator mape_acc;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  BatchTape scratch;
  const auto chunk = static_cast<std::size_t>(eval_batch_size(config));
  for (std::size_t begin = 0; begin < val.size(); begin += chunk) {
    const std::size_t end = std::min(val.size(), begin + chunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    val.gather(idx, inputs, targets);
    const Eigen::MatrixXd pred = forward_batch(config, params, inputs, &scratch);
    const Eigen::MatrixXd z_targets = targets.unaryExpr([&](double y) { return norm.encode_sum(y); });
    loss_sum += mse_loss_batch(pred, z_targets, nullptr) * static_cast<double>(idx.size());
    for (Eigen::Index b = 0; b < pred.rows(); ++b) {
      for (Eigen::Index j = 0; j < pred.cols(); ++j) {
        mape_acc.add(targets(b, j), norm.decode_sum(pred(b, j)));
      }
    }
  }
  return {loss_sum / static_cast<double>(val.size()), mape_acc.percent()};
}

json hyper_json(const Hyperparams& hp) {
  json j;
  j["learning_rate"] = hp.learning_rate;
  j["beta1"] = hp.beta1;
  j["beta2"] = hp.beta2;
  j["adam_eps"] = hp.adam_eps;
  j["batch_size"] = hp.batch_size;
  j["max_epochs"] = hp.max_epochs;
  j["patience"] = hp.patience;
  j["clip_norm"] = hp.clip_norm;
  j["seed"] = hp.seed;
  return j;
}

Hyperparams hyper_from(const json& j) {
  Hyperparams hp;
  hp.learning_rate = j.at("learning_rate").get<double>();
  hp.beta1 = j.at("beta1").get<double>();
  hp.beta2 = j.at("beta2").get<double>();
  hp.adam_eps = j.at("adam_eps").get<double>();
  hp.batch_size = j.at("batch_size").get<int>();
  hp.max_epochs = j.at("max_epochs").get<int>();
  hp.patience = j.at("patience").get<int>();
  hp.clip_norm = j.at("clip_norm").get<double>();
  hp.seed = j.at("seed").get<std::uint64_t>();
  return hp;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string describe(const GridEntry& e) {
  return std::string(to_string(e.arch)) + "(H_cell=" + std::to_string(e.h_cell) +
         ", H_out=" + std::to_string(e.h_out) + ")";
}

}  // namespace

DatasetSplits prepare_splits(std::span<const DownsampledTrace> traces, int seq_len, int horizon,
                             WindowStrides strides, CurrentTransform transform) {
  if (traces.empty()) throw DataError("no traces to split");
  if (strides.train < 1 || strides.eval < 1) throw ConfigError("window strides must be >= 1");
  std::vector<SplitTrace> parts;
  parts.reserve(traces.size());
  std::vector<DownsampledTrace> training;
  for (const auto& trace : traces) {
    parts.push_back(split_70_15_15(trace));
    training.push_back(parts.back().train);
  }

  DatasetSplits out;
  out.norm = fit_normalizer(training, transform);
  training.clear();
  out.dataset_hash = dataset_fingerprint(traces);
  out.train = WindowSet(seq_len, horizon);
  out.val = WindowSet(seq_len, horizon);
  out.test = WindowSet(seq_len, horizon);
  for (const auto& part : parts) {
    add_split(out.train, part.train, out.norm, strides.train, "train");
    add_split(out.val, part.val, out.norm, strides.eval, "validation");
    add_split(out.test, part.test, out.norm, strides.eval, "test");
  }
  return out;
}

WindowSet prepare_test_windows(std::span<const DownsampledTrace> traces, const NormStats& norm,
                               int seq_len, int horizon, int stride) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  WindowSet test(seq_len, horizon);
  for (const auto& trace : traces) add_split(test, split_70_15_15(trace).test, norm, stride, "test");
  return test;
}

std::string_view to_string(StopReason reason) {
  return reason == StopReason::kPatience ? "patience" : "max_epochs";
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedU};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainRun train(const NetworkConfig& config, const DatasetSplits& data, const Hyperparams& hyper,
               const TrainOptions& options) {
  config.validate();
  hyper.validate();
  if (data.train.empty()) throw DataError("training split has no windows");
  if (data.val.empty()) throw DataError("validation split has no windows");
  if (data.train.seq_len() != config.seq_len || data.train.horizon() != config.output_size) {
    throw ShapeError("windows have T=" + std::to_string(data.train.seq_len()) + ", H_out=" +
                     std::to_string(data.train.horizon()) + " but the network expects T=" +
                     std::to_string(config.seq_len) + ", H_out=" +
                     std::to_string(config.output_size));
  }
  if (config.input_size != kFeatureCount) {
    throw ShapeError("network expects H_in=" + std::to_string(config.input_size) +
                     ", windows encode " + std::to_string(kFeatureCount) + " features");
  }

  TrainRun run;
  run.config = config;
  run.hyper = hyper;
  NetworkParams params = init_params(config, hyper.seed);
  AdamState adam = AdamState::zeros(config);
  Gradients grads = NetworkParams::zeros(config);
  BatchTape tape;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  Eigen::MatrixXd d_pred;

  // A set smaller than one batch is trained as a single batch.
  const std::size_t n = data.train.size();
  const std::size_t batch = std::min(n, static_cast<std::size_t>(hyper.batch_size));
  const std::size_t batches = n / batch;

  double best_mape = std::numeric_limits<double>::infinity();
  int since_best = 0;
  run.stop_reason = StopReason::kMaxEpochs;
  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    const auto order = epoch_order(n, hyper.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < batches; ++k) {
      const std::span<const std::size_t> idx(order.data() + k * batch, batch);
      data.train.gather(idx, inputs, targets);
      targets = targets.unaryExpr([&](double y) { return data.norm.encode_sum(y); });
      const Eigen::MatrixXd pred = forward_batch(config, params, inputs, &tape);
      const double loss = mse_loss_batch(pred, targets, &d_pred);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(k + 1));
      }
      loss_sum += loss;
      grads.set_zero();
      backward_batch(config, params, tape, d_pred, grads);
      try {
        if (hyper.clip_norm > 0.0) clip_global_norm(grads, hyper.clip_norm);
        adam_step(params, grads, adam, hyper);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(k + 1) + ": " + e.what());
      }
    }

    const ValStats val = validation_pass(config, params, data.norm, data.val);
    EpochRecord record{epoch + 1, loss_sum / static_cast<double>(batches), val.loss, val.mape_pct};
    if (!std::isfinite(val.loss)) {
      throw NumericError("non-finite validation loss after epoch " + std::to_string(epoch + 1));
    }
    run.history.push_back(record);
    spdlog::info("{} H_cell={} H_out={} epoch {}: train_loss {:.6f} val_loss {:.6f} val_mape {:.3f}%",
                 to_string(config.arch), config.cell_size, config.output_size, record.epoch,
                 record.train_loss, record.val_loss, record.val_mape_pct);
    if (options.on_epoch) options.on_epoch(record);

    if (val.mape_pct < best_mape) {
      best_mape = val.mape_pct;
      since_best = 0;
      run.best = Checkpoint{config, params, data.norm};
      run.best_epoch = record.epoch;
    } else if (++since_best >= hyper.patience) {
      run.stop_reason = StopReason::kPatience;
      break;
    }
  }
  if (run.best_epoch == 0) run.best = Checkpoint{config, params, data.norm};
  return run;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::string out(kHistoryHeader);
  out += '\n';
  for (const auto& r : history) {
    out += detail::format_int(r.epoch) + ',' + detail::format_double(r.train_loss) + ',' +
           detail::format_double(r.val_loss) + ',' + detail::format_double(r.val_mape_pct) + '\n';
  }
  return out;
}

std::vector<EpochRecord> parse_history_csv(std::string_view text) {
  std::vector<EpochRecord> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line_no == 1) {
      if (line != kHistoryHeader) throw ParseError("history.csv", 1, "unexpected header");
      continue;
    }
    if (line.empty()) continue;
    EpochRecord r;
    double* fields[] = {&r.train_loss, &r.val_loss, &r.val_mape_pct};
    auto comma = line.find(',');
    const auto ep = std::from_chars(line.data(), line.data() + comma, r.epoch);
    if (comma == std::string_view::npos || ep.ec != std::errc()) {
      throw ParseError("history.csv", line_no, "bad epoch");
    }
    for (double* f : fields) {
      line = line.substr(comma + 1);
      comma = line.find(',');
      const auto stop = comma == std::string_view::npos ? line.size() : comma;
      const auto res = std::from_chars(line.data(), line.data() + stop, *f);
      if (res.ec != std::errc() || res.ptr != line.data() + stop) {
        throw ParseError("history.csv", line_no, "bad number");
      }
    }
    out.push_back(r);
  }
  return out;
}

std::string run_id(const NetworkConfig& config, const Hyperparams& hyper,
                   const std::string& dataset_hash, WindowStrides strides) {
  json j;
  j["arch"] = to_string(config.arch);
  j["num_layers"] = config.num_layers;
  j["T"] = config.seq_len;
  j["H_in"] = config.input_size;
  j["H_cell"] = config.cell_size;
  j["H_out"] = config.output_size;
  j["hyper"] = hyper_json(hyper);
  j["dataset_hash"] = dataset_hash;
  j["train_stride"] = strides.train;
  j["eval_stride"] = strides.eval;
  std::uint64_t hash = detail::kFnvOffset;
  detail::fnv1a(hash, j.dump());
  return detail::hex64(hash);
}

void write_run(const RunRecord& record) {
  std::error_code ec;
  std::filesystem::create_directories(record.dir, ec);
  if (ec) throw IoError("cannot create " + record.dir.string() + ": " + ec.message());
  write_checkpoint_file(record.dir / "checkpoint", record.run.best);
  write_text(record.dir / "history.csv", history_csv(record.run.history));

  const auto& c = record.run.config;
  json meta;
  meta["id"] = record.id;
  meta["status"] = "complete";
  meta["arch"] = to_string(c.arch);
  meta["num_layers"] = c.num_layers;
  meta["T"] = c.seq_len;
  meta["H_in"] = c.input_size;
  meta["H_cell"] = c.cell_size;
  meta["H_out"] = c.output_size;
  meta["params"] = count_parameters(c);
  meta["hyper"] = hyper_json(record.run.hyper);
  meta["seed"] = record.run.hyper.seed;
  meta["dataset_hash"] = record.dataset_hash;
  meta["train_stride"] = record.strides.train;
  meta["eval_stride"] = record.strides.eval;
  meta["epochs"] = record.run.history.size();
  meta["best_epoch"] = record.run.best_epoch;
  meta["stop_reason"] = to_string(record.run.stop_reason);
  // Written last: its presence marks the run complete.
  write_text(record.dir / "run.meta", meta.dump(2) + "\n");
}

std::optional<RunRecord> read_run(const std::filesystem::path& dir) {
  const auto meta_path = dir / "run.meta";
  if (!std::filesystem::exists(meta_path)) return std::nullopt;
  json meta;
  try {
    meta = json::parse(read_text(meta_path));
  } catch (const json::parse_error& e) {
    throw LoadError(meta_path.string(), e.what());
  }
  RunRecord record;
  record.dir = dir;
  try {
    if (meta.at("status").get<std::string>() != "complete") return std::nullopt;
    record.id = meta.at("id").get<std::string>();
    record.dataset_hash = meta.at("dataset_hash").get<std::string>();
    record.strides = {meta.at("train_stride").get<int>(), meta.at("eval_stride").get<int>()};
    record.run.hyper = hyper_from(meta.at("hyper"));
    record.run.best_epoch = meta.at("best_epoch").get<int>();
    record.run.stop_reason = meta.at("stop_reason").get<std::string>() == "patience"
                                 ? StopReason::kPatience
                                 : StopReason::kMaxEpochs;
  } catch (const json::exception& e) {
    throw LoadError(meta_path.string(), e.what());
  }
  record.run.best = read_checkpoint_file(dir / "checkpoint");
  record.run.config = record.run.best.config;
  record.run.history = parse_history_csv(read_text(dir / "history.csv"));
  return record;
}

GridPreset grid_preset_from_string(std::string_view name) {
  if (name == "paper") return GridPreset::kPaper;
  if (name == "desk") return GridPreset::kDesk;
  throw ConfigError("unknown grid preset '" + std::string(name) + "' (expected paper or desk)");
}

std::vector<GridEntry> grid_entries(GridPreset preset) {
  const int largest = preset == GridPreset::kPaper ? 650 : 128;
  std::vector<GridEntry> out;
  for (const int h_cell : {2, 4, 8, 16, 32, 64, largest}) out.push_back({Arch::kLstmp, h_cell, 1});
  for (const int h_cell : {32, 64}) {
    for (const int h_out : {1, 2, 3, 10, 15, 50}) out.push_back({Arch::kLstmp, h_cell, h_out});
  }
  return out;
}

GridPlan plan_grid(std::span<const GridEntry> entries, int seq_len, int input_size) {
  GridPlan plan;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const GridEntry& e = entries[k];
    NetworkConfig config;
    config.arch = e.arch;
    config.seq_len = seq_len;
    config.input_size = input_size;
    config.cell_size = e.h_cell;
    config.output_size = e.h_out;
    try {
      config.validate();
      plan.runs.push_back({e, k});
    } catch (const ConfigError& err) {
      spdlog::warn("skipping grid entry {}: {}", describe(e), err.what());
      plan.skipped.emplace_back(e, err.what());
    }
  }
  return plan;
}

std::vector<GridRunResult> run_grid(const GridPlan& plan, std::span<const DownsampledTrace> traces,
                                    const Hyperparams& hyper, const std::filesystem::path& runs_dir,
                                    int seq_len, WindowStrides strides) {
  // Visit runs grouped by horizon so only one set of windows is alive at a time.
  std::vector<std::size_t> order(plan.runs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return plan.runs[a].entry.h_out < plan.runs[b].entry.h_out;
  });

  const std::string dataset_hash = dataset_fingerprint(traces);
  std::vector<std::optional<GridRunResult>> results(plan.runs.size());
  std::optional<DatasetSplits> splits;
  for (const std::size_t k : order) {
    const PlannedRun& planned = plan.runs[k];
    NetworkConfig config;
    config.arch = planned.entry.arch;
    config.seq_len = seq_len;
    config.cell_size = planned.entry.h_cell;
    config.output_size = planned.entry.h_out;
    Hyperparams hp = hyper;
    hp.seed = hyper.seed + planned.index;

    const std::string id = run_id(config, hp, dataset_hash, strides);
    const auto dir = runs_dir / id;
    if (auto existing = read_run(dir); existing && existing->id == id) {
      spdlog::info("run {} ({}) already complete, skipping", id, describe(planned.entry));
      results[k] = GridRunResult{planned, std::move(*existing), true};
      continue;
    }
    if (!splits || splits->train.horizon() != config.output_size) {
      splits.reset();
      splits = prepare_splits(traces, seq_len, config.output_size, strides);
    }
    spdlog::info("training {} seed {} -> {}", describe(planned.entry), hp.seed, id);
    RunRecord record{id, dir, dataset_hash, strides, train(config, *splits, hp)};
    write_run(record);
    results[k] = GridRunResult{planned, std::move(record), false};
  }

  std::vector<GridRunResult> out;
  out.reserve(results.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

}  // namespace energyfc
