#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace energyfc {

/// The four nodes of the healthcare scenario. The order is the one-hot order.
enum class NodeId { kCentral = 0, kHr = 1, kBt = 2, kOs = 3 };
inline constexpr std::array<NodeId, 4> kAllNodes = {NodeId::kCentral, NodeId::kHr, NodeId::kBt,
                                                    NodeId::kOs};

enum class Role { kMaster, kSlave };

std::string_view to_string(NodeId node);
std::string_view to_string(Role role);
NodeId node_from_string(std::string_view name);
Role role_from_string(std::string_view name);

/// Static, time-independent features of a node.
struct NodeMeta {
  NodeId node = NodeId::kCentral;
  Role role = Role::kMaster;
  int nr_connections = 3;
  double transmission_rate_pps = 0.0;
  double packet_size_b = 0.0;

  /// Central is the master of three links; peripherals are slaves with one.
  void validate() const;

  bool operator==(const NodeMeta&) const = default;
};

/// Reads/writes the sidecar metadata document of a raw trace.
NodeMeta parse_node_meta(std::string_view json_text);
std::string format_node_meta(const NodeMeta& meta);

/// Raw current samples at a fixed pitch (10 us for 100 kHz).
struct RawTrace {
  NodeMeta meta;
  std::int64_t start_timestamp_us = 0;
  std::int64_t sample_period_us = 10;
  std::vector<double> currents_ua;

  std::int64_t duration_us() const {
    return static_cast<std::int64_t>(currents_ua.size()) * sample_period_us;
  }
};

struct RawParseResult {
  RawTrace trace;
  std::size_t rejected_trailing_lines = 0;
};

/// Parses `timestamp_us,current_ua` CSV. Timestamps must advance by exactly
/// `sample_period_us`. An unterminated final line that does not parse is
/// dropped and counted instead of failing.
RawParseResult parse_raw_trace(std::istream& in, const NodeMeta& meta,
                               std::string_view source = "<raw>",
                               std::int64_t sample_period_us = 10);

void write_raw_trace(std::ostream& out, const RawTrace& trace);

struct DownsampledRow {
  std::int64_t timestamp_us = 0;
  double sum_current_ua = 0.0;
  double max_current_ua = 0.0;

  bool operator==(const DownsampledRow&) const = default;
};

struct DownsampledTrace {
  NodeMeta meta;
  std::vector<DownsampledRow> rows;
};

/// Sum and max over consecutive blocks of `factor` raw samples. The trailing
/// remainder is dropped; each row takes the timestamp of its first sample.
DownsampledTrace downsample(const RawTrace& raw, int factor = 100);

/// Column header of the downsampled CSV.
inline constexpr std::string_view kDownsampledHeader =
    "timestamp_us,sum_current_ua,max_current_ua,role,nr_connections,transmission_rate_pps,"
    "packet_size_b,node";

void write_downsampled_csv(std::ostream& out, std::span<const DownsampledTrace> traces);

/// Reads a downsampled CSV holding one or more nodes; rows are grouped by
/// node in order of first appearance.
std::vector<DownsampledTrace> read_downsampled_csv(std::istream& in,
                                                   std::string_view source = "<downsampled>");

/// How current channels are mapped before z-scoring.
enum class CurrentTransform { kIdentity, kLog1p };

std::string_view to_string(CurrentTransform transform);
CurrentTransform transform_from_string(std::string_view name);

struct FeatureStats {
  double mean = 0.0;
  double stddev = 1.0;
  bool constant = false;

  double encode(double value) const { return constant ? 0.0 : (value - mean) / stddev; }
  double decode(double z) const { return constant ? mean : z * stddev + mean; }

  /// Population statistics; flags the feature constant when stddev is 0.
  static FeatureStats fit(std::span<const double> values);
};

/// Normalisation fitted on the training split of all nodes together.
struct NormStats {
  CurrentTransform current_transform = CurrentTransform::kLog1p;
  FeatureStats sum_current;
  FeatureStats max_current;
  FeatureStats transmission_rate;
  FeatureStats packet_size;
  double max_nr_connections = 1.0;

  double transform(double current) const;
  double inverse_transform(double value) const;

  /// Normalised value of a raw sum-of-currents, and its inverse.
  double encode_sum(double sum_ua) const { return sum_current.encode(transform(sum_ua)); }
  double decode_sum(double z) const { return inverse_transform(sum_current.decode(z)); }
};

/// Global statistics over the training rows of every node.
NormStats fit_normalizer(std::span<const DownsampledTrace> training,
                         CurrentTransform transform = CurrentTransform::kLog1p);

inline constexpr int kFeatureCount = 10;

/// [z(sum), z(max), role_bit, nr_connections / max, z(rate), z(packet_size), one-hot node x4]
Eigen::Matrix<double, kFeatureCount, 1> encode_row(const DownsampledRow& row, const NodeMeta& meta,
                                                   const NormStats& stats);

struct SplitTrace {
  DownsampledTrace train, val, test;
};

/// Contiguous split at floor(0.70 L) and floor(0.85 L).
SplitTrace split_70_15_15(const DownsampledTrace& trace);

/// One training example. Targets are raw sums of currents.
struct Sample {
  Eigen::MatrixXd input;  // T x H_in
  Eigen::VectorXd target;
  NodeId node = NodeId::kCentral;
  std::int64_t t0_us = 0;  // timestamp of the first target step
};

/// Rows of one node encoded once, shared by every window over them.
struct EncodedSeries {
  NodeMeta meta;
  Eigen::Matrix<double, Eigen::Dynamic, kFeatureCount, Eigen::RowMajor> features;
  std::vector<double> sums;
  std::vector<std::int64_t> timestamps;
};

EncodedSeries encode_series(const DownsampledTrace& trace, const NormStats& stats);

/// Sliding windows addressed by (series, start row); samples are materialised
/// on demand.
class WindowSet {
 public:
  struct Ref {
    std::uint32_t series;
    std::uint32_t start;
  };

  WindowSet() = default;
  WindowSet(int seq_len, int horizon) : seq_len_(seq_len), horizon_(horizon) {}

  /// Adds every window of `series` whose start is a multiple of `stride`.
  /// Returns how many windows were added (0 when the series is too short).
  std::size_t add_series(EncodedSeries series, int stride = 1);

  std::size_t size() const { return refs_.size(); }
  bool empty() const { return refs_.empty(); }
  int seq_len() const { return seq_len_; }
  int horizon() const { return horizon_; }
  const std::vector<EncodedSeries>& series() const { return series_; }
  const Ref& ref(std::size_t i) const { return refs_[i]; }

  NodeId node(std::size_t i) const { return series_[refs_[i].series].meta.node; }
  Sample sample(std::size_t i) const;

  /// Fills step-major inputs ((T*B) x H_in, row t*B + b is step t of window b)
  /// and raw targets (B x horizon) for the given windows.
  void gather(std::span<const std::size_t> indices, Eigen::MatrixXd& inputs,
              Eigen::MatrixXd& targets) const;

 private:
  int seq_len_ = 50;
  int horizon_ = 1;
  std::vector<EncodedSeries> series_;
  std::vector<Ref> refs_;
};

/// All stride-1 windows over one node's contiguous rows.
std::vector<Sample> make_windows(const DownsampledTrace& rows, const NormStats& stats,
                                 int seq_len, int horizon);

/// Number of stride-1 windows a series of `length` rows yields.
inline std::size_t window_count(std::size_t length, int seq_len, int horizon) {
  const std::size_t need = static_cast<std::size_t>(seq_len + horizon);
  return length < need ? 0 : length - need + 1;
}

/// FNV-1a of the downsampled CSV rendering of `traces`, as 16 hex digits.
std::string dataset_fingerprint(std::span<const DownsampledTrace> traces);

}  // namespace energyfc
