#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "core/geometry.hpp"
#include "core/label.hpp"

namespace exammon {

struct SchedulePhase {
  Label label = Label::kNormal;
  std::size_t frames = 0;
};

// Accepts a JSON array [{"label": "Abnormal", "frames": 60}, ...] or the
// inline form "normal:30,abnormal:60". Throws Error(kBadSchedule).
std::vector<SchedulePhase> parse_schedule(std::string_view text);
std::string format_schedule(const std::vector<SchedulePhase>& schedule);

// Deterministic synthetic frames, one per scheduled frame, each drawn from the
// generator's pose distribution for its phase's label.
std::vector<RawFrame> scripted_stream(std::uint64_t seed, const std::vector<SchedulePhase>& schedule,
                                      int width = 640, int height = 480);

struct LoadConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string room_id;
  std::string token;
  std::size_t clients = 20;
  double fps = 27.0;
  double duration_s = 30.0;
  std::uint64_t seed = 1;
  // Cycled for as long as the run lasts.
  std::vector<SchedulePhase> schedule{{Label::kNormal, 90}, {Label::kAbnormal, 30}};
  // Send precomputed features instead of raw landmarks.
  std::optional<FeatureMode> features;
  // Attach a small image to every n-th frame (0 = never).
  std::size_t image_every = 0;
  // How long to wait for outstanding replies after the last send.
  double drain_s = 2.0;
  std::string student_prefix = "sim";

  // Throws Error(kInvalidArgument).
  void validate() const;
};

struct ClientReport {
  std::string student_id;
  std::uint64_t sent = 0;
  std::uint64_t acknowledged = 0;
  std::uint64_t verdicts = 0;
  std::uint64_t dropped = 0;
  std::uint64_t errors = 0;
  std::uint32_t violations = 0;
  std::uint32_t locks = 0;
  double achieved_fps = 0.0;
  bool completed = true;
};

struct LoadReport {
  std::size_t clients = 0;
  double requested_fps = 0.0;
  double duration_s = 0.0;
  std::uint64_t sent = 0;
  // Frames that got any reply (a verdict or an error).
  std::uint64_t acknowledged = 0;
  std::uint64_t verdicts = 0;
  std::uint64_t dropped = 0;
  std::uint64_t errors = 0;
  std::uint64_t in_flight = 0;
  double verdicts_per_s = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;
  double mean_ms = 0.0;
  double min_client_fps = 0.0;
  double mean_client_fps = 0.0;
  std::uint64_t violations = 0;
  std::uint64_t locks = 0;
  bool incomplete = false;
  std::vector<std::string> problems;
  std::vector<ClientReport> per_client;
  // Round trips in milliseconds, sorted.
  std::vector<double> latencies_ms;

  double ack_ratio() const { return sent == 0 ? 0.0 : static_cast<double>(acknowledged) / sent; }
};

// Nearest-rank percentile of sorted data; q in (0, 100].
double percentile(const std::vector<double>& sorted, double q);

// Connects every client (throws kConnectFailure / kAuthFailure), then streams
// for the configured duration. Failures after that flag the report incomplete.
LoadReport run_load(const LoadConfig& cfg);

nlohmann::json load_report_to_json(const LoadReport& r);
// "lower_ms,upper_ms,count" rows with bins of bin_ms.
std::string latency_histogram_csv(const LoadReport& r, double bin_ms = 1.0);

}  // namespace exammon
