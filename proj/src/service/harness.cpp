#include "service/harness.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <random>
#include <thread>

#include "core/errors.hpp"
#include "core/synth.hpp"
#include "service/blob_store.hpp"
#include "service/net.hpp"

namespace exammon {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

Error bad_schedule(const std::string& why) { return Error(ErrorCode::kBadSchedule, why); }

Label schedule_label(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (name == "normal") return Label::kNormal;
  if (name == "abnormal") return Label::kAbnormal;
  throw bad_schedule("unknown phase label '" + name + "'");
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

std::vector<SchedulePhase> parse_schedule(std::string_view text) {
  std::vector<SchedulePhase> out;
  const std::string t = trim(text);
  if (t.empty()) throw bad_schedule("schedule is empty");
  if (t.front() == '[') {
    json j = json::parse(t, nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw bad_schedule("schedule is not a JSON array");
    for (const json& p : j) {
      if (!p.is_object() || !p.contains("label") || !p.contains("frames") ||
          !p["label"].is_string() || !p["frames"].is_number_integer() || p["frames"].get<long long>() < 0) {
        throw bad_schedule("each phase needs a label and a non-negative integer frame count");
      }
      out.push_back({schedule_label(p["label"].get<std::string>()), p["frames"].get<std::size_t>()});
    }
  } else {
    std::size_t pos = 0;
    while (pos <= t.size()) {
      const std::size_t comma = std::min(t.find(',', pos), t.size());
      const std::string item = trim(std::string_view(t).substr(pos, comma - pos));
      const std::size_t colon = item.find(':');
      if (colon == std::string::npos) throw bad_schedule("phase '" + item + "' is not label:frames");
      const std::string count = trim(std::string_view(item).substr(colon + 1));
      if (count.empty() || !std::all_of(count.begin(), count.end(),
                                        [](unsigned char c) { return std::isdigit(c); })) {
        throw bad_schedule("bad frame count in '" + item + "'");
      }
      out.push_back({schedule_label(trim(std::string_view(item).substr(0, colon))),
                     static_cast<std::size_t>(std::stoull(count))});
      pos = comma + 1;
    }
  }
  std::size_t total = 0;
  for (const auto& p : out) total += p.frames;
  if (total == 0) throw bad_schedule("schedule has no frames");
  return out;
}

std::string format_schedule(const std::vector<SchedulePhase>& schedule) {
  std::string s;
  for (const auto& p : schedule) {
    if (!s.empty()) s += ',';
    s += p.label == Label::kNormal ? "normal:" : "abnormal:";
    s += std::to_string(p.frames);
  }
  return s;
}

std::vector<RawFrame> scripted_stream(std::uint64_t seed, const std::vector<SchedulePhase>& schedule,
                                      int width, int height) {
  if (schedule.empty()) throw bad_schedule("schedule is empty");
  const SynthSpec defaults;
  std::mt19937_64 rng(seed);
  std::vector<RawFrame> frames;
  for (const auto& phase : schedule) {
    for (std::size_t i = 0; i < phase.frames; ++i) {
      const PoseParams pose = sample_pose(phase.label, defaults.theta_deg, width, height, rng);
      const std::size_t k = frames.size();
      frames.push_back(render_pose(pose, defaults.jitter, width, height,
                                   "stream-" + std::to_string(seed) + "-" + std::to_string(k),
                                   static_cast<std::int64_t>(k) * 37));
    }
  }
  return frames;
}

void LoadConfig::validate() const {
  if (clients < 1) throw Error(ErrorCode::kInvalidArgument, "clients must be >= 1");
  if (!(fps > 0.0) || !std::isfinite(fps)) throw Error(ErrorCode::kInvalidArgument, "fps must be > 0");
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    throw Error(ErrorCode::kInvalidArgument, "duration must be > 0");
  }
  if (!(drain_s >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "drain must be >= 0");
  if (port == 0) throw Error(ErrorCode::kInvalidArgument, "server port is required");
  if (room_id.empty()) throw Error(ErrorCode::kInvalidArgument, "room id is required");
  std::size_t total = 0;
  for (const auto& p : schedule) total += p.frames;
  if (total == 0) throw Error(ErrorCode::kBadSchedule, "schedule has no frames");
}

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double rank = std::ceil(q / 100.0 * static_cast<double>(sorted.size()));
  const std::size_t idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(sorted.size())));
  return sorted[idx - 1];
}

namespace {

std::string frame_body(const RawFrame& f, const std::optional<FeatureMode>& features) {
  std::string s;
  char num[40];
  if (features) {
    const FeatureVector fv = featurize(validate_frame(f), *features, KeypointSelection::default_selection());
    s = "\"features\":[";
    for (std::size_t i = 0; i < fv.values.size(); ++i) {
      std::snprintf(num, sizeof(num), i == 0 ? "%.9g" : ",%.9g", fv.values[i]);
      s += num;
    }
    s += ']';
    return s;
  }
  s.reserve(f.points.size() * 24 + 64);
  s = "\"width\":" + std::to_string(f.width) + ",\"height\":" + std::to_string(f.height) +
      ",\"landmarks\":[";
  for (std::size_t i = 0; i < f.points.size(); ++i) {
    std::snprintf(num, sizeof(num), i == 0 ? "[%.6f,%.6f]" : ",[%.6f,%.6f]", f.points[i].x, f.points[i].y);
    s += num;
  }
  s += ']';
  return s;
}

struct ClientRun {
  net::UniqueFd fd;
  std::string buf;
  std::uint64_t first_seq = 1;
  std::vector<std::string> bodies;
  std::vector<Clock::time_point> sent_at;
  std::vector<std::uint8_t> answered;
  std::vector<double> rtts;
  std::uint32_t last_violation_count = 0;
  std::string last_state;
  std::string problem;
  ClientReport rep;
};

// Reads whatever is available and hands complete lines to fn. False on EOF
// or error.
template <typename Fn>
bool pump(ClientRun& c, Fn&& fn) {
  char tmp[16384];
  const ssize_t n = ::recv(c.fd.get(), tmp, sizeof(tmp), MSG_DONTWAIT);
  if (n == 0) return false;
  if (n < 0) return errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR;
  c.buf.append(tmp, static_cast<std::size_t>(n));
  std::size_t start = 0;
  for (;;) {
    const std::size_t nl = c.buf.find('\n', start);
    if (nl == std::string::npos) break;
    fn(std::string_view(c.buf).substr(start, nl - start));
    start = nl + 1;
  }
  c.buf.erase(0, start);
  return true;
}

bool wait_readable(int fd, Clock::time_point until) {
  const auto left = until - Clock::now();
  const auto ns = std::max<std::int64_t>(0, std::chrono::duration_cast<std::chrono::nanoseconds>(left).count());
  timespec ts{static_cast<time_t>(ns / 1000000000), static_cast<long>(ns % 1000000000)};
  pollfd p{fd, POLLIN, 0};
  return ::ppoll(&p, 1, &ts, nullptr) > 0;
}

void handshake(ClientRun& c, const LoadConfig& cfg) {
  c.fd = net::connect_tcp(cfg.host, cfg.port);
  const json hello = {{"type", "hello"}, {"role", "student"}, {"token", cfg.token},
                      {"room_id", cfg.room_id}, {"id", c.rep.student_id}};
  if (!net::send_all(c.fd.get(), hello.dump() + "\n")) {
    throw Error(ErrorCode::kConnectFailure, "connection closed during hello");
  }
  const auto deadline = Clock::now() + std::chrono::seconds(5);
  std::optional<json> reply;
  while (!reply) {
    if (Clock::now() >= deadline) throw Error(ErrorCode::kConnectFailure, "no welcome from server");
    if (!wait_readable(c.fd.get(), deadline)) continue;
    const bool open = pump(c, [&](std::string_view line) {
      if (!reply) reply = json::parse(line, nullptr, false);
    });
    if (!reply && !open) throw Error(ErrorCode::kAuthFailure, "server closed the connection during hello");
  }
  const std::string type = reply->is_object() ? reply->value("type", "") : "";
  if (type == "error") {
    const std::string code = reply->value("code", "");
    const ErrorCode ec = code == "UnknownRoom" ? ErrorCode::kUnknownRoom : ErrorCode::kAuthFailure;
    throw Error(ec, "hello rejected: " + reply->value("message", code));
  }
  if (type != "welcome") throw Error(ErrorCode::kAuthFailure, "unexpected reply to hello");
  c.first_seq = reply->value("last_seq", std::uint64_t{0}) + 1;
}

void handle_reply(ClientRun& c, std::string_view line, Clock::time_point now) {
  json j = json::parse(line, nullptr, false);
  if (!j.is_object()) return;
  const std::string type = j.value("type", "");
  auto frame_index = [&]() -> std::optional<std::size_t> {
    auto it = j.find("seq");
    if (it == j.end() || !it->is_number_unsigned()) return std::nullopt;
    const std::uint64_t seq = it->get<std::uint64_t>();
    if (seq < c.first_seq || seq - c.first_seq >= c.sent_at.size()) return std::nullopt;
    const std::size_t idx = seq - c.first_seq;
    if (c.answered[idx]) return std::nullopt;
    c.answered[idx] = 1;
    return idx;
  };
  if (type == "verdict") {
    const auto idx = frame_index();
    if (!idx) return;
    ++c.rep.acknowledged;
    ++c.rep.verdicts;
    c.rtts.push_back(std::chrono::duration<double, std::milli>(now - c.sent_at[*idx]).count());
    const auto vc = j.value("violation_count", std::uint32_t{0});
    if (vc > c.last_violation_count) c.rep.violations += vc - c.last_violation_count;
    c.last_violation_count = vc;
    // Locks are read off the verdict's state so a lock on the final frame
    // still counts when the trailing "locked" notice arrives after draining.
    const std::string state = j.value("state", "");
    if (state == "Locked" && c.last_state != "Locked") ++c.rep.locks;
    if (!state.empty()) c.last_state = state;
  } else if (type == "dropped") {
    if (frame_index()) ++c.rep.dropped;
  } else if (type == "error") {
    if (frame_index()) {
      ++c.rep.acknowledged;
      ++c.rep.errors;
    } else if (c.problem.empty()) {
      c.problem = j.value("message", "server error");
    }
  } else if (type == "resumed") {
    c.last_violation_count = j.value("violation_count", std::uint32_t{0});
    c.last_state = "Monitoring";
  }
}

void run_client(ClientRun& c, const LoadConfig& cfg, Clock::time_point t0) {
  const auto interval = std::chrono::duration<double>(1.0 / cfg.fps);
  const std::uint64_t slots =
      static_cast<std::uint64_t>(std::ceil(cfg.duration_s * cfg.fps - 1e-9));
  const auto end_of_sending = t0 + std::chrono::duration_cast<Clock::duration>(
                                       std::chrono::duration<double>(cfg.duration_s));
  const auto drain_deadline = end_of_sending + std::chrono::duration_cast<Clock::duration>(
                                                   std::chrono::duration<double>(cfg.drain_s));
  auto slot_time = [&](std::uint64_t k) {
    return t0 + std::chrono::duration_cast<Clock::duration>(interval * static_cast<double>(k));
  };
  c.sent_at.reserve(slots);
  c.answered.reserve(slots);

  std::uint64_t next_slot = 0;
  std::string msg;
  bool open = true;
  for (;;) {
    auto now = Clock::now();
    if (next_slot < slots && now >= slot_time(next_slot)) {
      // Late wakeups skip the missed slots rather than bursting.
      const auto late = std::chrono::duration<double>(now - t0) / interval;
      const std::uint64_t slot = std::min<std::uint64_t>(slots - 1, std::max<std::uint64_t>(
                                                                        next_slot, static_cast<std::uint64_t>(late)));
      const std::size_t idx = c.sent_at.size();
      const std::uint64_t seq = c.first_seq + idx;
      const auto ts_ms = static_cast<std::int64_t>(std::llround(static_cast<double>(slot) * 1000.0 / cfg.fps));
      msg = "{\"type\":\"frame\",\"seq\":" + std::to_string(seq) + ",\"ts_ms\":" + std::to_string(ts_ms) +
            "," + c.bodies[idx % c.bodies.size()];
      if (cfg.image_every > 0 && idx % cfg.image_every == 0) {
        msg += ",\"image_b64\":\"" +
               base64_encode("simulated capture " + c.rep.student_id + " " + std::to_string(idx)) + "\"";
      }
      msg += "}\n";
      c.sent_at.push_back(Clock::now());
      c.answered.push_back(0);
      ++c.rep.sent;
      if (!net::send_all(c.fd.get(), msg)) {
        c.problem = "connection lost while sending";
        break;
      }
      next_slot = slot + 1;
      continue;
    }
    const bool sending = next_slot < slots;
    const std::uint64_t outstanding = c.rep.sent - c.rep.acknowledged - c.rep.dropped;
    if (!sending && (outstanding == 0 || now >= drain_deadline)) break;
    const auto wake = sending ? slot_time(next_slot) : drain_deadline;
    if (wait_readable(c.fd.get(), wake)) {
      now = Clock::now();
      open = pump(c, [&](std::string_view line) { handle_reply(c, line, now); });
      if (!open) {
        c.problem = "server closed the connection";
        break;
      }
    }
  }
  c.rep.achieved_fps = static_cast<double>(c.rep.sent) / cfg.duration_s;
  if (!c.problem.empty()) c.rep.completed = false;
}

}  // namespace

LoadReport run_load(const LoadConfig& cfg) {
  cfg.validate();
  std::vector<ClientRun> runs(cfg.clients);
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    ClientRun& c = runs[k];
    c.rep.student_id = cfg.student_prefix + "-" + std::to_string(k);
    for (const RawFrame& f : scripted_stream(cfg.seed + k, cfg.schedule)) {
      c.bodies.push_back(frame_body(f, cfg.features));
    }
  }
  for (ClientRun& c : runs) handshake(c, cfg);

  const auto t0 = Clock::now() + std::chrono::milliseconds(20);
  std::vector<std::thread> threads;
  threads.reserve(runs.size());
  for (ClientRun& c : runs) {
    threads.emplace_back([&c, &cfg, t0] {
      try {
        run_client(c, cfg, t0);
      } catch (const std::exception& e) {
        c.problem = e.what();
        c.rep.completed = false;
      }
    });
  }
  for (auto& t : threads) t.join();

  LoadReport r;
  r.clients = cfg.clients;
  r.requested_fps = cfg.fps;
  r.duration_s = cfg.duration_s;
  r.min_client_fps = runs.empty() ? 0.0 : runs.front().rep.achieved_fps;
  for (ClientRun& c : runs) {
    ::shutdown(c.fd.get(), SHUT_RDWR);
    r.sent += c.rep.sent;
    r.acknowledged += c.rep.acknowledged;
    r.verdicts += c.rep.verdicts;
    r.dropped += c.rep.dropped;
    r.errors += c.rep.errors;
    r.violations += c.rep.violations;
    r.locks += c.rep.locks;
    r.min_client_fps = std::min(r.min_client_fps, c.rep.achieved_fps);
    r.mean_client_fps += c.rep.achieved_fps;
    if (!c.rep.completed) {
      r.incomplete = true;
      r.problems.push_back(c.rep.student_id + ": " + c.problem);
    }
    r.latencies_ms.insert(r.latencies_ms.end(), c.rtts.begin(), c.rtts.end());
    r.per_client.push_back(c.rep);
  }
  if (!runs.empty()) {
    r.mean_client_fps = std::max(r.min_client_fps, r.mean_client_fps / static_cast<double>(runs.size()));
  }
  r.in_flight = r.sent - r.acknowledged - r.dropped;
  r.verdicts_per_s = static_cast<double>(r.verdicts) / cfg.duration_s;
  std::sort(r.latencies_ms.begin(), r.latencies_ms.end());
  r.p50_ms = percentile(r.latencies_ms, 50);
  r.p95_ms = percentile(r.latencies_ms, 95);
  r.p99_ms = percentile(r.latencies_ms, 99);
  if (!r.latencies_ms.empty()) {
    r.max_ms = r.latencies_ms.back();
    double sum = 0.0;
    for (double v : r.latencies_ms) sum += v;
    r.mean_ms = sum / static_cast<double>(r.latencies_ms.size());
  }
  return r;
}

json load_report_to_json(const LoadReport& r) {
  json clients = json::array();
  for (const ClientReport& c : r.per_client) {
    clients.push_back({{"student_id", c.student_id},
                       {"sent", c.sent},
                       {"acknowledged", c.acknowledged},
                       {"verdicts", c.verdicts},
                       {"dropped", c.dropped},
                       {"errors", c.errors},
                       {"achieved_fps", c.achieved_fps},
                       {"violations", c.violations},
                       {"locks", c.locks},
                       {"completed", c.completed}});
  }
  return {{"clients", r.clients},
          {"requested_fps", r.requested_fps},
          {"duration_s", r.duration_s},
          {"sent", r.sent},
          {"acknowledged", r.acknowledged},
          {"verdicts", r.verdicts},
          {"dropped", r.dropped},
          {"errors", r.errors},
          {"in_flight", r.in_flight},
          {"ack_ratio", r.ack_ratio()},
          {"verdicts_per_s", r.verdicts_per_s},
          {"latency_ms",
           {{"p50", r.p50_ms}, {"p95", r.p95_ms}, {"p99", r.p99_ms}, {"max", r.max_ms}, {"mean", r.mean_ms}}},
          {"client_fps", {{"min", r.min_client_fps}, {"mean", r.mean_client_fps}}},
          {"violations", r.violations},
          {"locks", r.locks},
          {"incomplete", r.incomplete},
          {"problems", r.problems},
          {"per_client", clients}};
}

std::string latency_histogram_csv(const LoadReport& r, double bin_ms) {
  if (!(bin_ms > 0.0)) throw Error(ErrorCode::kInvalidArgument, "histogram bin must be > 0");
  std::string out = "lower_ms,upper_ms,count\n";
  if (r.latencies_ms.empty()) return out;
  const std::size_t bins = static_cast<std::size_t>(r.latencies_ms.back() / bin_ms) + 1;
  std::vector<std::uint64_t> counts(bins, 0);
  for (double v : r.latencies_ms) ++counts[std::min(bins - 1, static_cast<std::size_t>(v / bin_ms))];
  char row[96];
  for (std::size_t b = 0; b < bins; ++b) {
    std::snprintf(row, sizeof(row), "%g,%g,%llu\n", b * bin_ms, (b + 1) * bin_ms,
                  static_cast<unsigned long long>(counts[b]));
    out += row;
  }
  return out;
}

}  // namespace exammon
