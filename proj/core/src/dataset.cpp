#include "energyfc/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>

#include "energyfc/errors.hpp"
#include "text_format.hpp"

namespace energyfc {

namespace {

constexpr std::string_view kRawHeader = "timestamp_us,current_ua";

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

bool parse_int(std::string_view s, std::int64_t& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string format_downsampled_row(const DownsampledRow& row, const NodeMeta& meta) {
  std::string line;
  line.reserve(96);
  line += detail::format_int(row.timestamp_us);
  line += ',';
  line += detail::format_double(row.sum_current_ua);
  line += ',';
  line += detail::format_double(row.max_current_ua);
  line += ',';
  line += to_string(meta.role);
  line += ',';
  line += detail::format_int(meta.nr_connections);
  line += ',';
  line += detail::format_double(meta.transmission_rate_pps);
  line += ',';
  line += detail::format_double(meta.packet_size_b);
  line += ',';
  line += to_string(meta.node);
  line += '\n';
  return line;
}

}  // namespace

std::string_view to_string(NodeId node) {
  switch (node) {
    case NodeId::kCentral:
      return "central";
    case NodeId::kHr:
      return "hr";
    case NodeId::kBt:
      return "bt";
    case NodeId::kOs:
      return "os";
  }
  throw DataError("unknown node id " + std::to_string(static_cast<int>(node)));
}

std::string_view to_string(Role role) { return role == Role::kMaster ? "master" : "slave"; }

NodeId node_from_string(std::string_view name) {
  for (const NodeId node : kAllNodes) {
    if (to_string(node) == name) return node;
  }
  throw DataError("unknown node '" + std::string(name) + "' (expected central, hr, bt or os)");
}

Role role_from_string(std::string_view name) {
  if (name == "master") return Role::kMaster;
  if (name == "slave") return Role::kSlave;
  throw DataError("unknown role '" + std::string(name) + "' (expected master or slave)");
}

void NodeMeta::validate() const {
  const auto who = std::string(to_string(node));
  if (node == NodeId::kCentral) {
    if (role != Role::kMaster) throw DataError(who + ": the central node must be master");
    if (nr_connections != 3) throw DataError(who + ": the central node holds 3 connections");
  } else {
    if (role != Role::kSlave) throw DataError(who + ": peripheral nodes must be slave");
    if (nr_connections != 1) throw DataError(who + ": peripheral nodes hold 1 connection");
  }
  if (!(transmission_rate_pps >= 0.0) || !std::isfinite(transmission_rate_pps)) {
    throw DataError(who + ": transmission rate must be finite and >= 0");
  }
  if (!(packet_size_b >= 0.0) || !std::isfinite(packet_size_b)) {
    throw DataError(who + ": packet size must be finite and >= 0");
  }
}

NodeMeta parse_node_meta(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("node metadata: ") + e.what());
  }
  NodeMeta meta;
  try {
    meta.node = node_from_string(doc.at("node").get<std::string>());
    meta.role = role_from_string(doc.at("role").get<std::string>());
    meta.nr_connections = doc.at("nr_connections").get<int>();
    meta.transmission_rate_pps = doc.at("transmission_rate_pps").get<double>();
    meta.packet_size_b = doc.at("packet_size_b").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("node metadata: ") + e.what());
  }
  meta.validate();
  return meta;
}

std::string format_node_meta(const NodeMeta& meta) {
  nlohmann::ordered_json doc;
  doc["node"] = to_string(meta.node);
  doc["role"] = to_string(meta.role);
  doc["nr_connections"] = meta.nr_connections;
  doc["transmission_rate_pps"] = meta.transmission_rate_pps;
  doc["packet_size_b"] = meta.packet_size_b;
  return doc.dump(2) + "\n";
}

RawParseResult parse_raw_trace(std::istream& in, const NodeMeta& meta, std::string_view source,
                               std::int64_t sample_period_us) {
  meta.validate();
  const std::string src(source);
  RawParseResult result;
  result.trace.meta = meta;
  result.trace.sample_period_us = sample_period_us;

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(src, 1, "missing header");
  ++line_no;
  if (trim_cr(line) != kRawHeader) {
    throw ParseError(src, line_no, "expected header '" + std::string(kRawHeader) + "'");
  }

  std::int64_t prev_ts = 0;
  bool have_prev = false;
  while (std::getline(in, line)) {
    ++line_no;
    const bool unterminated = in.eof();
    const std::string_view text = trim_cr(line);
    if (text.empty()) continue;

    const auto fields = split_fields(text);
    std::int64_t ts = 0;
    double current = 0.0;
    std::string problem;
    if (fields.size() != 2) {
      problem = "expected 2 columns, got " + std::to_string(fields.size());
    } else if (!parse_int(fields[0], ts)) {
      problem = "malformed timestamp '" + std::string(fields[0]) + "'";
    } else if (!parse_double(fields[1], current)) {
      problem = "malformed current '" + std::string(fields[1]) + "'";
    }
    if (!problem.empty()) {
      if (unterminated) {
        ++result.rejected_trailing_lines;
        spdlog::warn("{}:{}: dropping partial trailing line ({})", src, line_no, problem);
        break;
      }
      throw ParseError(src, line_no, problem);
    }
    if (current < 0.0) throw ParseError(src, line_no, "negative current " + std::string(fields[1]));
    if (have_prev) {
      if (ts <= prev_ts) throw ParseError(src, line_no, "non-monotone timestamp");
      if (ts - prev_ts != sample_period_us) {
        throw ParseError(src, line_no,
                         "timestamp step " + std::to_string(ts - prev_ts) + " us, expected " +
                             std::to_string(sample_period_us));
      }
    } else {
      result.trace.start_timestamp_us = ts;
      have_prev = true;
    }
    prev_ts = ts;
    result.trace.currents_ua.push_back(current);
  }
  return result;
}

void write_raw_trace(std::ostream& out, const RawTrace& trace) {
  out << kRawHeader << '\n';
  std::string line;
  for (std::size_t k = 0; k < trace.currents_ua.size(); ++k) {
    line.clear();
    line += detail::format_int(trace.start_timestamp_us +
                               static_cast<std::int64_t>(k) * trace.sample_period_us);
    line += ',';
    line += detail::format_double(trace.currents_ua[k]);
    line += '\n';
    out << line;
  }
}

DownsampledTrace downsample(const RawTrace& raw, int factor) {
  if (factor < 1) throw ConfigError("downsampling factor must be >= 1");
  DownsampledTrace out;
  out.meta = raw.meta;
  const std::size_t blocks = raw.currents_ua.size() / static_cast<std::size_t>(factor);
  out.rows.reserve(blocks);
  const double* data = raw.currents_ua.data();
  for (std::size_t k = 0; k < blocks; ++k) {
    const double* block = data + k * factor;
    double sum = 0.0;
    double peak = block[0];
    for (int j = 0; j < factor; ++j) {
      sum += block[j];
      peak = std::max(peak, block[j]);
    }
    const auto first = static_cast<std::int64_t>(k) * factor;
    out.rows.push_back({raw.start_timestamp_us + first * raw.sample_period_us, sum, peak});
  }
  return out;
}

void write_downsampled_csv(std::ostream& out, std::span<const DownsampledTrace> traces) {
  out << kDownsampledHeader << '\n';
  for (const auto& trace : traces) {
    for (const auto& row : trace.rows) out << format_downsampled_row(row, trace.meta);
  }
}

std::vector<DownsampledTrace> read_downsampled_csv(std::istream& in, std::string_view source) {
  const std::string src(source);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(src, 1, "missing header");
  ++line_no;
  if (trim_cr(line) != kDownsampledHeader) {
    throw ParseError(src, line_no, "expected header '" + std::string(kDownsampledHeader) + "'");
  }

  std::vector<DownsampledTrace> traces;
  std::map<NodeId, std::size_t> slot;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim_cr(line);
    if (text.empty()) continue;
    const auto f = split_fields(text);
    if (f.size() != 8) {
      throw ParseError(src, line_no, "expected 8 columns, got " + std::to_string(f.size()));
    }
    DownsampledRow row;
    NodeMeta meta;
    std::int64_t conns = 0;
    if (!parse_int(f[0], row.timestamp_us)) throw ParseError(src, line_no, "malformed timestamp");
    if (!parse_double(f[1], row.sum_current_ua) || row.sum_current_ua < 0.0) {
      throw ParseError(src, line_no, "malformed or negative sum_current_ua");
    }
    if (!parse_double(f[2], row.max_current_ua) || row.max_current_ua < 0.0) {
      throw ParseError(src, line_no, "malformed or negative max_current_ua");
    }
    if (!parse_int(f[4], conns)) throw ParseError(src, line_no, "malformed nr_connections");
    if (!parse_double(f[5], meta.transmission_rate_pps)) {
      throw ParseError(src, line_no, "malformed transmission_rate_pps");
    }
    if (!parse_double(f[6], meta.packet_size_b)) {
      throw ParseError(src, line_no, "malformed packet_size_b");
    }
    try {
      meta.role = role_from_string(f[3]);
      meta.node = node_from_string(f[7]);
      meta.nr_connections = static_cast<int>(conns);
      meta.validate();
    } catch (const DataError& e) {
      throw ParseError(src, line_no, e.what());
    }

    auto it = slot.find(meta.node);
    if (it == slot.end()) {
      it = slot.emplace(meta.node, traces.size()).first;
      traces.push_back(DownsampledTrace{meta, {}});
    }
    auto& trace = traces[it->second];
    if (!(trace.meta == meta)) {
      throw ParseError(src, line_no, "static features of node changed mid-file");
    }
    const auto& rows = trace.rows;
    if (!rows.empty()) {
      const std::int64_t step = row.timestamp_us - rows.back().timestamp_us;
      if (step <= 0) throw ParseError(src, line_no, "non-monotone timestamp");
      if (rows.size() >= 2 && step != rows[1].timestamp_us - rows[0].timestamp_us) {
        throw ParseError(src, line_no, "irregular timestamp pitch");
      }
    }
    trace.rows.push_back(row);
  }
  return traces;
}

std::string_view to_string(CurrentTransform transform) {
  return transform == CurrentTransform::kLog1p ? "log1p" : "identity";
}

CurrentTransform transform_from_string(std::string_view name) {
  if (name == "log1p") return CurrentTransform::kLog1p;
  if (name == "identity") return CurrentTransform::kIdentity;
  throw ConfigError("unknown current transform '" + std::string(name) + "'");
}

FeatureStats FeatureStats::fit(std::span<const double> values) {
  if (values.empty()) throw DataError("cannot fit statistics on an empty training split");
  double sum = 0.0;
  for (const double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (const double v : values) sq += (v - mean) * (v - mean);
  FeatureStats s;
  s.mean = mean;
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  if (s.stddev <= 1e-12 * std::max(1.0, std::abs(mean))) {
    s.constant = true;
    s.stddev = 0.0;
  }
  return s;
}

double NormStats::transform(double current) const {
  return current_transform == CurrentTransform::kLog1p ? std::log1p(current) : current;
}

double NormStats::inverse_transform(double value) const {
  return current_transform == CurrentTransform::kLog1p ? std::expm1(value) : value;
}

NormStats fit_normalizer(std::span<const DownsampledTrace> training, CurrentTransform transform) {
  NormStats stats;
  stats.current_transform = transform;
  std::vector<double> sums, maxes, rates, packets;
  int max_conn = 0;
  for (const auto& trace : training) {
    for (const auto& row : trace.rows) {
      sums.push_back(stats.transform(row.sum_current_ua));
      maxes.push_back(stats.transform(row.max_current_ua));
      rates.push_back(trace.meta.transmission_rate_pps);
      packets.push_back(trace.meta.packet_size_b);
    }
    if (!trace.rows.empty()) max_conn = std::max(max_conn, trace.meta.nr_connections);
  }
  if (sums.empty()) throw DataError("cannot fit statistics on an empty training split");
  stats.sum_current = FeatureStats::fit(sums);
  stats.max_current = FeatureStats::fit(maxes);
  stats.transmission_rate = FeatureStats::fit(rates);
  stats.packet_size = FeatureStats::fit(packets);
  stats.max_nr_connections = max_conn > 0 ? max_conn : 1;
  return stats;
}

Eigen::Matrix<double, kFeatureCount, 1> encode_row(const DownsampledRow& row, const NodeMeta& meta,
                                                   const NormStats& stats) {
  const int node = static_cast<int>(meta.node);
  if (node < 0 || node > 3) throw DataError("unknown node id " + std::to_string(node));
  Eigen::Matrix<double, kFeatureCount, 1> x = Eigen::Matrix<double, kFeatureCount, 1>::Zero();
  x(0) = stats.sum_current.encode(stats.transform(row.sum_current_ua));
  x(1) = stats.max_current.encode(stats.transform(row.max_current_ua));
  x(2) = meta.role == Role::kMaster ? 1.0 : 0.0;
  x(3) = static_cast<double>(meta.nr_connections) / stats.max_nr_connections;
  x(4) = stats.transmission_rate.encode(meta.transmission_rate_pps);
  x(5) = stats.packet_size.encode(meta.packet_size_b);
  x(6 + node) = 1.0;
  return x;
}

SplitTrace split_70_15_15(const DownsampledTrace& trace) {
  const std::size_t n = trace.rows.size();
  const std::size_t a = n * 70 / 100;
  const std::size_t b = n * 85 / 100;
  SplitTrace s;
  s.train.meta = s.val.meta = s.test.meta = trace.meta;
  const auto begin = trace.rows.begin();
  s.train.rows.assign(begin, begin + static_cast<std::ptrdiff_t>(a));
  s.val.rows.assign(begin + static_cast<std::ptrdiff_t>(a), begin + static_cast<std::ptrdiff_t>(b));
  s.test.rows.assign(begin + static_cast<std::ptrdiff_t>(b), trace.rows.end());
  return s;
}

EncodedSeries encode_series(const DownsampledTrace& trace, const NormStats& stats) {
  EncodedSeries s;
  s.meta = trace.meta;
  const auto n = static_cast<Eigen::Index>(trace.rows.size());
  s.features.resize(n, kFeatureCount);
  s.sums.reserve(trace.rows.size());
  s.timestamps.reserve(trace.rows.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& row = trace.rows[static_cast<std::size_t>(k)];
    s.features.row(k) = encode_row(row, trace.meta, stats).transpose();
    s.sums.push_back(row.sum_current_ua);
    s.timestamps.push_back(row.timestamp_us);
  }
  return s;
}

std::size_t WindowSet::add_series(EncodedSeries series, int stride) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  const std::size_t count = window_count(series.sums.size(), seq_len_, horizon_);
  const auto id = static_cast<std::uint32_t>(series_.size());
  std::size_t added = 0;
  for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(stride)) {
    refs_.push_back({id, static_cast<std::uint32_t>(start)});
    ++added;
  }
  series_.push_back(std::move(series));
  return added;
}

Sample WindowSet::sample(std::size_t i) const {
  const Ref& r = refs_.at(i);
  const EncodedSeries& s = series_[r.series];
  Sample out;
  out.input = s.features.middleRows(r.start, seq_len_);
  out.target.resize(horizon_);
  for (int j = 0; j < horizon_; ++j) out.target(j) = s.sums[r.start + seq_len_ + j];
  out.node = s.meta.node;
  out.t0_us = s.timestamps[r.start + seq_len_];
  return out;
}

void WindowSet::gather(std::span<const std::size_t> indices, Eigen::MatrixXd& inputs,
                       Eigen::MatrixXd& targets) const {
  const auto batch = static_cast<Eigen::Index>(indices.size());
  inputs.resize(seq_len_ * batch, kFeatureCount);
  targets.resize(batch, horizon_);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Ref& r = refs_[indices[static_cast<std::size_t>(b)]];
    const EncodedSeries& s = series_[r.series];
    for (int t = 0; t < seq_len_; ++t) inputs.row(t * batch + b) = s.features.row(r.start + t);
    for (int j = 0; j < horizon_; ++j) targets(b, j) = s.sums[r.start + seq_len_ + j];
  }
}

std::vector<Sample> make_windows(const DownsampledTrace& rows, const NormStats& stats, int seq_len,
                                 int horizon) {
  if (seq_len < 1 || horizon < 1) throw ConfigError("T and H_out must be >= 1");
  WindowSet set(seq_len, horizon);
  if (set.add_series(encode_series(rows, stats)) == 0) {
    spdlog::warn("node {}: {} rows cannot hold a window of T={} plus H_out={}",
                 to_string(rows.meta.node), rows.rows.size(), seq_len, horizon);
  }
  std::vector<Sample> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(set.sample(i));
  return out;
}

std::string dataset_fingerprint(std::span<const DownsampledTrace> traces) {
  std::uint64_t hash = detail::kFnvOffset;
  detail::fnv1a(hash, kDownsampledHeader);
  detail::fnv1a(hash, "\n");
  for (const auto& trace : traces) {
    for (const auto& row : trace.rows) {
      detail::fnv1a(hash, format_downsampled_row(row, trace.meta));
    }
  }
  return detail::hex64(hash);
}

}  // namespace energyfc
