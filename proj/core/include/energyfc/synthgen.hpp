#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "energyfc/dataset.hpp"

namespace energyfc {

/// Generative description of one node's current draw at 100 kHz.
///
/// Every connection interval holds one connection event per entry of
/// `event_offsets_ms`, starting `anchor_offset_ms` after the interval
/// boundary. An event draws a plateau current for roughly
/// `event_duration_ms` with a single radio peak in its first half
/// millisecond; outside events the node sleeps. Each periodic sensor
/// transmission stretches the next event by 1 ms and raises its plateau 1.5x.
struct NodeProfile {
  NodeMeta meta;
  double connection_interval_ms = 50.0;
  std::vector<double> event_offsets_ms = {0.0};
  double anchor_offset_ms = 0.5;
  double event_duration_ms = 3.0;
  double duration_jitter_ms = 1.0;         // bound on |duration - event_duration_ms|
  double duration_jitter_stddev_ms = 0.2;  // spread inside that bound
  double sleep_current_ua = 5.0;
  double event_plateau_current_ua = 3000.0;
  double plateau_jitter_sigma = 0.1;       // log-normal spread of each event's plateau
  double peak_current_max_ua = 11329.6786862516;
  double peak_min_fraction = 0.6;
  double transmission_interval_s = 0.0;    // 0 disables transmissions
  double noise_stddev_fraction = 0.3;      // per-sample multiplicative noise
  bool jitter = true;                      // false: identical events, peak at max
  std::uint64_t seed = 0;

  void validate() const;
  int events_per_interval() const { return static_cast<int>(event_offsets_ms.size()); }
};

/// Central, HR, BT and OS profiles of the healthcare scenario.
std::array<NodeProfile, 4> default_profiles();

const NodeProfile& default_profile(NodeId node);

/// Deterministic in (profile, duration_s, seed). Only whole connection
/// intervals receive events.
RawTrace generate_trace(const NodeProfile& profile, double duration_s, std::uint64_t seed);

/// floor(duration / interval) * events_per_interval
std::size_t expected_event_count(const NodeProfile& profile, double duration_s);

/// Convenience: generate and downsample each default node in turn, without
/// keeping more than one raw trace alive.
std::vector<DownsampledTrace> synthesize_dataset(std::span<const NodeProfile> profiles,
                                                 double duration_s, std::uint64_t seed,
                                                 int factor = 100);

}  // namespace energyfc
