#include <cstdio>
#include <cstdlib>

#include "core/classifier.hpp"
#include "core/session.hpp"
#include "service/harness.hpp"
#include "service/server.hpp"
#include "support/helpers.hpp"

using namespace exammon;
using nlohmann::json;
using testing::TempDir;

namespace {

struct Served {
  TempDir dir{"harness"};
  MonitorServer server;
  explicit Served(ViolationPolicy pol = {}) : server(options(dir.path())) {
    server.start();
    server.create_room({"load", testing::trained_model_path(), pol, 0.5, "stu", "pro"});
  }
  ~Served() { server.stop(); }
  static ServerOptions options(const std::filesystem::path& p) {
    ServerOptions o;
    o.data_dir = p;
    return o;
  }
  LoadConfig config() const {
    LoadConfig c;
    c.port = server.channel_port();
    c.room_id = "load";
    c.token = "stu";
    c.drain_s = 3.0;
    return c;
  }
};

// What the server should conclude for the first `n` frames of a client's
// stream: landmarks rounded as they travel, then predict and observe.
std::pair<std::uint32_t, std::uint32_t> offline_outcome(const LoadConfig& cfg, std::size_t client,
                                                        std::size_t n, const ViolationPolicy& pol) {
  const ClassifierModel model = load_model(testing::trained_model_path());
  const auto stream = scripted_stream(cfg.seed + client, cfg.schedule);
  ExamSession s = new_session("x", pol);
  std::uint32_t locks = 0;
  for (std::size_t k = 0; k < n; ++k) {
    RawFrame f = stream[k % stream.size()];
    char buf[40];
    for (auto& p : f.points) {
      std::snprintf(buf, sizeof(buf), "%.6f", p.x);
      p.x = std::strtod(buf, nullptr);
      std::snprintf(buf, sizeof(buf), "%.6f", p.y);
      p.y = std::strtod(buf, nullptr);
    }
    const Prediction pr = predict(model, featurize(validate_frame(f), model.feature_mode), 0.5);
    auto t = observe(s, Verdict{pr.label, pr.p_abnormal, "", false}, static_cast<std::int64_t>(k));
    for (const auto& e : t.events) locks += e.kind == EventKind::kLocked;
    s = std::move(t.session);
  }
  return {s.violation_count, locks};
}

}  // namespace

TEST_CASE("schedule parsing") {
  auto s = parse_schedule("normal:30,abnormal:60");
  REQUIRE(s.size() == 2);
  CHECK(s[0].label == Label::kNormal);
  CHECK(s[0].frames == 30);
  CHECK(s[1].label == Label::kAbnormal);
  CHECK(s[1].frames == 60);
  CHECK(format_schedule(s) == "normal:30,abnormal:60");

  s = parse_schedule(R"([{"label": "Abnormal", "frames": 60}])");
  REQUIRE(s.size() == 1);
  CHECK(s[0].label == Label::kAbnormal);
  CHECK(s[0].frames == 60);

  CHECK_ERROR_CODE(parse_schedule(""), ErrorCode::kBadSchedule);
  CHECK_ERROR_CODE(parse_schedule("normal:0"), ErrorCode::kBadSchedule);
  CHECK_ERROR_CODE(parse_schedule("sideways:10"), ErrorCode::kBadSchedule);
  CHECK_ERROR_CODE(parse_schedule("normal:-3"), ErrorCode::kBadSchedule);
  CHECK_ERROR_CODE(parse_schedule("normal"), ErrorCode::kBadSchedule);
  CHECK_ERROR_CODE(parse_schedule(R"([{"label": "Abnormal"}])"), ErrorCode::kBadSchedule);
  CHECK_ERROR_CODE(parse_schedule("[]"), ErrorCode::kBadSchedule);
}

TEST_CASE("scripted streams are deterministic and follow the schedule") {
  const auto sched = parse_schedule("normal:5,abnormal:7");
  const auto a = scripted_stream(3, sched);
  const auto b = scripted_stream(3, sched);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].points == b[i].points);
    CHECK_NOTHROW(validate_frame(a[i]));
  }
  CHECK_FALSE(scripted_stream(4, sched)[0].points == a[0].points);
}

TEST_CASE("percentile is nearest rank") {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  CHECK(percentile(v, 50) == 50);
  CHECK(percentile(v, 95) == 95);
  CHECK(percentile(v, 99) == 99);
  CHECK(percentile(v, 100) == 100);
  CHECK(percentile({7.0}, 50) == 7.0);
  CHECK(percentile({1.0, 2.0, 3.0}, 50) == 2.0);
}

TEST_CASE("load config validation") {
  LoadConfig c;
  c.port = 1;
  c.room_id = "r";
  CHECK_NOTHROW(c.validate());
  auto bad = [&](auto mutate) {
    LoadConfig d = c;
    mutate(d);
    CHECK_ERROR_CODE(d.validate(), ErrorCode::kInvalidArgument);
  };
  bad([](LoadConfig& d) { d.clients = 0; });
  bad([](LoadConfig& d) { d.fps = 0; });
  bad([](LoadConfig& d) { d.duration_s = 0; });
  bad([](LoadConfig& d) { d.port = 0; });
  bad([](LoadConfig& d) { d.room_id.clear(); });
}

TEST_CASE("connection failures surface as errors") {
  Served s;
  LoadConfig c = s.config();
  c.clients = 1;
  c.duration_s = 0.2;
  c.token = "nope";
  CHECK_ERROR_CODE(run_load(c), ErrorCode::kAuthFailure);
  c.token = "stu";
  c.room_id = "other";
  CHECK_ERROR_CODE(run_load(c), ErrorCode::kUnknownRoom);
  c.room_id = "load";
  c.port = 1;
  CHECK_ERROR_CODE(run_load(c), ErrorCode::kConnectFailure);
}

TEST_CASE("one client at 10 fps for one second") {
  Served s;
  LoadConfig c = s.config();
  c.clients = 1;
  c.fps = 10;
  c.duration_s = 1.0;
  const LoadReport r = run_load(c);
  CHECK(r.sent >= 9);
  CHECK(r.sent <= 10);
  CHECK(r.verdicts >= 9);
  CHECK(r.verdicts <= 10);
  CHECK(r.sent == r.acknowledged + r.dropped + r.in_flight);
  CHECK_FALSE(r.incomplete);
  CHECK(r.latencies_ms.size() == r.verdicts);
  CHECK(r.p50_ms <= r.p95_ms);
  CHECK(r.p95_ms <= r.p99_ms);
  CHECK(r.p99_ms <= r.max_ms);
  CHECK(r.min_client_fps <= 10.0 + 1e-9);
  const json j = load_report_to_json(r);
  CHECK(j["sent"] == r.sent);
  CHECK(j["latency_ms"]["p95"] == r.p95_ms);
  CHECK(j["client_fps"]["min"] == r.min_client_fps);
  const std::string csv = latency_histogram_csv(r);
  CHECK(csv.rfind("lower_ms,upper_ms,count\n", 0) == 0);
  std::uint64_t total = 0;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) total += std::stoull(line.substr(line.rfind(',') + 1));
  CHECK(total == r.latencies_ms.size());
}

TEST_CASE("an abnormal schedule drives violations and a lock") {
  ViolationPolicy pol;
  pol.cooldown_ms = 0;
  Served s(pol);
  LoadConfig c = s.config();
  c.clients = 2;
  c.fps = 27;
  c.duration_s = 60.0 / 27.0;
  c.schedule = parse_schedule("abnormal:60");
  const LoadReport r = run_load(c);
  CHECK_FALSE(r.incomplete);
  REQUIRE(r.per_client.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& pc = r.per_client[k];
    CHECK(pc.sent == 60);
    const auto [violations, locks] = offline_outcome(c, k, pc.sent, pol);
    CHECK(pc.violations == violations);
    CHECK(pc.locks == locks);
    CHECK(pc.violations == 4);
    CHECK(pc.locks == 1);
    const RosterSnapshot snap = s.server.snapshot("load");
    CHECK(snap.students[k].state == SessionState::kLocked);
  }
  CHECK(r.violations == 8);
  CHECK(r.locks == 2);
}

TEST_CASE("feature-mode streaming and images") {
  Served s;
  LoadConfig c = s.config();
  c.clients = 3;
  c.fps = 20;
  c.duration_s = 1.0;
  c.features = FeatureMode::kDist171;
  c.image_every = 5;
  const LoadReport r = run_load(c);
  CHECK_FALSE(r.incomplete);
  CHECK(r.sent == r.acknowledged + r.dropped + r.in_flight);
  CHECK(r.errors == 0);
  CHECK(r.verdicts == r.sent);
  for (const auto& pc : r.per_client) CHECK(pc.achieved_fps <= 20.0 + 1e-9);
}

TEST_CASE("ten clients: conservation and ordering of percentiles") {
  Served s;
  LoadConfig c = s.config();
  c.clients = 10;
  c.fps = 27;
  c.duration_s = 2.0;
  const LoadReport r = run_load(c);
  CHECK_FALSE(r.incomplete);
  CHECK(r.sent == r.acknowledged + r.dropped + r.in_flight);
  std::uint64_t sum = 0;
  for (const auto& pc : r.per_client) {
    sum += pc.sent;
    CHECK(pc.sent == pc.acknowledged + pc.dropped + (pc.sent - pc.acknowledged - pc.dropped));
    CHECK(pc.achieved_fps <= 27.0 + 1e-9);
  }
  CHECK(sum == r.sent);
  CHECK(r.p50_ms <= r.p95_ms);
  CHECK(r.p95_ms <= r.p99_ms);
  CHECK(r.ack_ratio() >= 0.95);
  CHECK(r.min_client_fps <= r.mean_client_fps);
}
