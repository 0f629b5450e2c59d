#include "energyfc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "energyfc/errors.hpp"

namespace energyfc {

namespace {

constexpr double kSamplesPerMs = 100.0;  // 100 kHz
constexpr std::int64_t kSamplePeriodUs = 10;

std::int64_t to_samples(double ms) { return std::llround(ms * kSamplesPerMs); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

NodeProfile make_profile(NodeId node) {
  NodeProfile p;
  p.meta.node = node;
  p.seed = static_cast<std::uint64_t>(node);
  switch (node) {
    case NodeId::kCentral:
      p.meta.role = Role::kMaster;
      p.meta.nr_connections = 3;
      p.meta.transmission_rate_pps = 0.0;
      p.meta.packet_size_b = 0.0;
      p.event_offsets_ms = {0.0, 5.0, 10.0};
      p.sleep_current_ua = 10.0;
      break;
    case NodeId::kHr:
      p.meta.role = Role::kSlave;
      p.meta.nr_connections = 1;
      p.meta.transmission_rate_pps = 1.0 / 5.0;
      p.meta.packet_size_b = 2.0;
      p.transmission_interval_s = 5.0;
      break;
    case NodeId::kBt:
      // Also powers a temperature sensor: a steady draw on top of the radio's
      // 5 uA sleep, with the same 1.5 uA absolute noise.
      p.meta.role = Role::kSlave;
      p.meta.nr_connections = 1;
      p.meta.transmission_rate_pps = 1.0 / 300.0;
      p.meta.packet_size_b = 4.0;
      p.transmission_interval_s = 300.0;
      p.sleep_current_ua = 50.0;
      p.noise_stddev_fraction = 0.03;
      break;
    case NodeId::kOs:
      p.meta.role = Role::kSlave;
      p.meta.nr_connections = 1;
      p.meta.transmission_rate_pps = 1.0;
      p.meta.packet_size_b = 1.0;
      p.transmission_interval_s = 1.0;
      break;
  }
  return p;
}

}  // namespace

void NodeProfile::validate() const {
  meta.validate();
  const auto fail = [&](const std::string& what) {
    throw ConfigError("profile " + std::string(to_string(meta.node)) + ": " + what);
  };
  if (!(connection_interval_ms > 0.0)) fail("connection interval must be > 0");
  if (event_offsets_ms.empty()) fail("at least one event per interval is required");
  if (!(event_duration_ms > 0.0)) fail("event duration must be > 0");
  if (event_duration_ms >= connection_interval_ms) fail("event duration must be < interval");
  if (!(duration_jitter_ms >= 0.0) || duration_jitter_ms >= event_duration_ms) {
    fail("duration jitter must lie in [0, event duration)");
  }
  if (!(duration_jitter_stddev_ms >= 0.0)) fail("duration jitter stddev must be >= 0");
  if (!(anchor_offset_ms >= 0.0)) fail("anchor offset must be >= 0");
  const double longest = event_duration_ms + duration_jitter_ms +
                         (transmission_interval_s > 0.0 ? 1.0 : 0.0);
  const auto [lo, hi] = std::minmax_element(event_offsets_ms.begin(), event_offsets_ms.end());
  if (*lo < 0.0) fail("event offsets must be >= 0");
  if (anchor_offset_ms + *hi + longest >= connection_interval_ms) {
    fail("events do not fit inside the connection interval");
  }
  std::vector<double> sorted = event_offsets_ms;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 1; k < sorted.size(); ++k) {
    if (sorted[k] - sorted[k - 1] <= longest) fail("events of one interval overlap");
  }
  if (!(sleep_current_ua >= 0.0) || !(event_plateau_current_ua >= 0.0)) {
    fail("currents must be >= 0");
  }
  if (!(peak_current_max_ua > 0.0)) fail("peak current must be > 0");
  if (!(peak_min_fraction >= 0.0 && peak_min_fraction <= 1.0)) {
    fail("peak_min_fraction must lie in [0, 1]");
  }
  if (!(plateau_jitter_sigma >= 0.0)) fail("plateau jitter sigma must be >= 0");
  if (!(noise_stddev_fraction >= 0.0)) fail("noise fraction must be >= 0");
  if (!(transmission_interval_s >= 0.0)) fail("transmission interval must be >= 0");
}

std::array<NodeProfile, 4> default_profiles() {
  return {make_profile(NodeId::kCentral), make_profile(NodeId::kHr), make_profile(NodeId::kBt),
          make_profile(NodeId::kOs)};
}

const NodeProfile& default_profile(NodeId node) {
  static const std::array<NodeProfile, 4> profiles = default_profiles();
  return profiles.at(static_cast<std::size_t>(node));
}

std::size_t expected_event_count(const NodeProfile& profile, double duration_s) {
  const std::int64_t n = std::llround(duration_s * 1000.0 * kSamplesPerMs);
  const std::int64_t interval = to_samples(profile.connection_interval_ms);
  return static_cast<std::size_t>(n / interval) *
         static_cast<std::size_t>(profile.events_per_interval());
}

RawTrace generate_trace(const NodeProfile& profile, double duration_s, std::uint64_t seed) {
  profile.validate();
  if (!(duration_s * 1000.0 >= profile.connection_interval_ms)) {
    throw ConfigError("duration must cover at least one connection interval");
  }

  const std::int64_t n = std::llround(duration_s * 1000.0 * kSamplesPerMs);
  const std::int64_t interval = to_samples(profile.connection_interval_ms);
  const std::int64_t anchor = to_samples(profile.anchor_offset_ms);
  const std::int64_t tx_interval = std::llround(profile.transmission_interval_s * 1e6 / 10.0);
  const double ceiling = profile.peak_current_max_ua;

  std::mt19937_64 rng(mix_seed(seed, profile.seed));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double nf = profile.noise_stddev_fraction;
  const auto clamp = [&](double v) { return std::clamp(v, 0.0, ceiling); };

  RawTrace trace;
  trace.meta = profile.meta;
  trace.sample_period_us = kSamplePeriodUs;
  trace.currents_ua.resize(static_cast<std::size_t>(n));
  double* x = trace.currents_ua.data();

  for (std::int64_t k = 0; k < n; ++k) {
    const double level = profile.sleep_current_ua;
    x[k] = nf > 0.0 ? clamp(level * (1.0 + nf * noise(rng))) : clamp(level);
  }

  std::int64_t next_tx = tx_interval > 0 ? tx_interval : -1;
  const std::int64_t intervals = n / interval;
  for (std::int64_t k = 0; k < intervals; ++k) {
    for (const double offset_ms : profile.event_offsets_ms) {
      const std::int64_t start = k * interval + anchor + to_samples(offset_ms);
      double duration_ms = profile.event_duration_ms;
      double level = profile.event_plateau_current_ua;
      if (profile.jitter) {
        const double jitter = std::clamp(profile.duration_jitter_stddev_ms * noise(rng),
                                         -profile.duration_jitter_ms, profile.duration_jitter_ms);
        duration_ms += jitter;
        level *= std::exp(profile.plateau_jitter_sigma * noise(rng));
      }
      if (next_tx > 0 && start >= next_tx) {
        duration_ms += 1.0;
        level *= 1.5;
        next_tx += tx_interval;
      }
      const std::int64_t end = std::min(n, start + std::max<std::int64_t>(1, to_samples(duration_ms)));
      for (std::int64_t s = start; s < end; ++s) {
        x[s] = nf > 0.0 ? clamp(level * (1.0 + nf * noise(rng))) : clamp(level);
      }
      std::int64_t peak_at = start;
      double peak = ceiling;
      if (profile.jitter) {
        const auto span = std::min<std::int64_t>(end - start, to_samples(0.5));
        peak_at = start + static_cast<std::int64_t>(unit(rng) * static_cast<double>(span));
        peak = ceiling * (profile.peak_min_fraction + (1.0 - profile.peak_min_fraction) * unit(rng));
      }
      x[std::min(peak_at, end - 1)] = clamp(peak);
    }
  }
  return trace;
}

std::vector<DownsampledTrace> synthesize_dataset(std::span<const NodeProfile> profiles,
                                                 double duration_s, std::uint64_t seed,
                                                 int factor) {
  std::vector<DownsampledTrace> out;
  out.reserve(profiles.size());
  for (const auto& profile : profiles) {
    out.push_back(downsample(generate_trace(profile, duration_s, seed), factor));
  }
  return out;
}

}  // namespace energyfc
