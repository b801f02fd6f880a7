// Exercises the shared library through its C header only.

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "exammon/exammon.h"

using nlohmann::json;

namespace {

constexpr int kSelected[19] = {1, 152, 10, 33, 133, 362, 263, 61, 291, 13, 14, 234, 454, 172, 397, 70, 300, 468, 473};

struct Str {
  char* p = nullptr;
  ~Str() { exm_string_free(p); }
  json parse() const { return json::parse(p); }
};

struct Dir {
  std::filesystem::path path;
  Dir() {
    path = std::filesystem::temp_directory_path() /
           ("exammon-capi-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~Dir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

struct Points {
  std::vector<double> x, y;
};

Points random_points(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Points p;
  for (int i = 0; i < 478; ++i) {
    p.x.push_back(u(rng));
    p.y.push_back(u(rng));
  }
  return p;
}

std::string record(const Points& p, const std::string& id, int w, int h, const char* label = nullptr) {
  json pts = json::array();
  for (std::size_t i = 0; i < p.x.size(); ++i) pts.push_back({p.x[i], p.y[i]});
  json j = {{"id", id}, {"ts_ms", 0}, {"width", w}, {"height", h}, {"landmarks", pts}};
  if (label) j["label"] = label;
  return j.dump();
}

std::vector<double> featurize(const std::string& rec, exm_feature_mode mode) {
  std::vector<double> out(exm_feature_dims(mode));
  size_t len = 0;
  REQUIRE(exm_featurize_record(rec.c_str(), mode, out.data(), out.size(), &len) == EXM_OK);
  REQUIRE(len == out.size());
  return out;
}

exm_model* trained_model(exm_dataset** keep_val = nullptr) {
  exm_dataset* all = nullptr;
  REQUIRE(exm_dataset_synthesize(R"({"n": 300, "seed": 11})", &all) == EXM_OK);
  exm_dataset *tr = nullptr, *va = nullptr;
  REQUIRE(exm_dataset_split(all, 0.8, 1, &tr, &va) == EXM_OK);
  exm_model* m = nullptr;
  REQUIRE(exm_model_init(EXM_DIST171, 5, &m) == EXM_OK);
  Str result;
  REQUIRE(exm_model_train(m, tr, va, R"({"epochs": 20})", nullptr, &result.p) == EXM_OK);
  exm_dataset_free(all);
  exm_dataset_free(tr);
  if (keep_val) {
    *keep_val = va;
  } else {
    exm_dataset_free(va);
  }
  return m;
}

}  // namespace

TEST_CASE("status names and the last error") {
  std::set<std::string> names;
  for (int s = EXM_OK; s <= EXM_INTERNAL; ++s) names.insert(exm_status_name(static_cast<exm_status>(s)));
  CHECK(names.size() == 29);
  CHECK(std::string(exm_status_name(EXM_OK)) == "Ok");
  CHECK(std::string(exm_status_name(EXM_ALL_ZERO_LANDMARKS)) == "AllZeroLandmarks");
  CHECK(std::string(exm_status_name(EXM_STALE_SEQ)) == "StaleSeq");
  CHECK(std::string(exm_version()).size() > 0);

  exm_feature_mode m;
  CHECK(exm_parse_feature_mode("sideways", &m) == EXM_INVALID_ARGUMENT);
  const std::string msg = exm_last_error_message();
  CHECK(msg.find("sideways") != std::string::npos);
  // The message is per thread.
  std::string other = "unset";
  std::thread([&] { other = exm_last_error_message(); }).join();
  CHECK(other.empty());
}

TEST_CASE("feature modes and dimensions") {
  exm_feature_mode m;
  REQUIRE(exm_parse_feature_mode("dist171", &m) == EXM_OK);
  CHECK(m == EXM_DIST171);
  REQUIRE(exm_parse_feature_mode("RAW19", &m) == EXM_OK);
  CHECK(m == EXM_RAW19);
  CHECK(exm_feature_dims(EXM_RAW478) == 956);
  CHECK(exm_feature_dims(EXM_RAW19) == 38);
  CHECK(exm_feature_dims(EXM_DIST171) == 171);
}

TEST_CASE("featurize_record against a direct computation") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Points p = random_points(rng);
    const int w = 320 + 40 * trial, h = 240 + 30 * trial;
    const std::string rec = record(p, "f" + std::to_string(trial), w, h);
    const auto raw = featurize(rec, EXM_RAW478);
    for (int i = 0; i < 478; ++i) {
      CHECK(raw[2 * i] == p.x[i]);
      CHECK(raw[2 * i + 1] == p.y[i]);
    }
    const auto r19 = featurize(rec, EXM_RAW19);
    for (int k = 0; k < 19; ++k) {
      CHECK(r19[2 * k] == p.x[kSelected[k]]);
      CHECK(r19[2 * k + 1] == p.y[kSelected[k]]);
    }
    const auto d = featurize(rec, EXM_DIST171);
    const double diag = std::sqrt(double(w) * w + double(h) * h);
    std::size_t n = 0;
    for (int i = 0; i < 19; ++i) {
      for (int j = i + 1; j < 19; ++j) {
        const double dx = (p.x[kSelected[i]] - p.x[kSelected[j]]) * w;
        const double dy = (p.y[kSelected[i]] - p.y[kSelected[j]]) * h;
        CHECK(std::abs(d[n++] - std::sqrt(dx * dx + dy * dy) / diag) <= 1e-12);
      }
    }
  }
}

TEST_CASE("featurize_record failures") {
  std::mt19937_64 rng(22);
  const Points p = random_points(rng);
  std::vector<double> buf(171);
  size_t len = 0;
  CHECK(exm_featurize_record(record(p, "a", 640, 480).c_str(), EXM_DIST171, buf.data(), 10, &len) ==
        EXM_INVALID_ARGUMENT);
  Points zero;
  zero.x.assign(478, 0.0);
  zero.y.assign(478, 0.0);
  CHECK(exm_featurize_record(record(zero, "z", 640, 480).c_str(), EXM_DIST171, buf.data(), 171, &len) ==
        EXM_ALL_ZERO_LANDMARKS);
  Points short_p = p;
  short_p.x.pop_back();
  short_p.y.pop_back();
  CHECK(exm_featurize_record(record(short_p, "s", 640, 480).c_str(), EXM_DIST171, buf.data(), 171, &len) ==
        EXM_WRONG_POINT_COUNT);
  Points out = p;
  out.x[3] = 1.5;
  CHECK(exm_featurize_record(record(out, "o", 640, 480).c_str(), EXM_DIST171, buf.data(), 171, &len) ==
        EXM_OUT_OF_RANGE);
  CHECK(exm_featurize_record(record(p, "m", 0, 480).c_str(), EXM_DIST171, buf.data(), 171, &len) ==
        EXM_BAD_METADATA);
  CHECK(exm_featurize_record("{oops", EXM_DIST171, buf.data(), 171, &len) == EXM_MALFORMED_RECORD);
}

TEST_CASE("featurize_file skips invalid frames") {
  Dir dir;
  std::mt19937_64 rng(23);
  Points zero;
  zero.x.assign(478, 0.0);
  zero.y.assign(478, 0.0);
  const Points a = random_points(rng), b = random_points(rng);
  {
    std::ofstream f(dir / "frames.ndjson");
    f << record(a, "a", 640, 480, "normal") << "\n" << record(zero, "z", 640, 480) << "\n\n"
      << record(b, "b", 640, 480) << "\n";
  }
  size_t written = 0, rejected = 0;
  REQUIRE(exm_featurize_file((dir / "frames.ndjson").c_str(), EXM_DIST171, (dir / "out.ndjson").c_str(), &written,
                             &rejected) == EXM_OK);
  CHECK(written == 2);
  CHECK(rejected == 1);
  std::ifstream in(dir / "out.ndjson");
  std::string line;
  std::vector<json> rows;
  while (std::getline(in, line)) rows.push_back(json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["id"] == "a");
  CHECK(rows[0]["label"] == "normal");
  CHECK(rows[0]["features"].size() == 171);
  CHECK(rows[0]["features"].get<std::vector<double>>() == featurize(record(a, "a", 640, 480), EXM_DIST171));
  CHECK_FALSE(rows[1].contains("label"));
  CHECK(exm_featurize_file((dir / "missing").c_str(), EXM_DIST171, (dir / "x").c_str(), &written, &rejected) ==
        EXM_IO_FAILURE);
}

TEST_CASE("datasets: synthesize, split, save and load") {
  Dir dir;
  exm_dataset* ds = nullptr;
  REQUIRE(exm_dataset_synthesize(R"({"n": 120, "abnormal_ratio": 0.25, "seed": 3})", &ds) == EXM_OK);
  CHECK(exm_dataset_size(ds) == 120);
  CHECK(exm_dataset_count_label(ds, 1) == 30);
  CHECK(exm_dataset_count_label(ds, 0) == 90);
  exm_dataset *tr = nullptr, *va = nullptr;
  REQUIRE(exm_dataset_split(ds, 0.8, 9, &tr, &va) == EXM_OK);
  CHECK(exm_dataset_size(tr) == 96);
  CHECK(exm_dataset_size(va) == 24);
  CHECK(exm_dataset_split(ds, 1.0, 9, &tr, &va) == EXM_INVALID_RATIO);
  REQUIRE(exm_dataset_save(ds, (dir / "ds.ndjson").c_str()) == EXM_OK);
  exm_dataset* back = nullptr;
  size_t rejected = 7;
  REQUIRE(exm_dataset_load((dir / "ds.ndjson").c_str(), &back, &rejected) == EXM_OK);
  CHECK(exm_dataset_size(back) == 120);
  CHECK(rejected == 0);
  CHECK(exm_dataset_synthesize(R"({"n": 0})", &ds) == EXM_BAD_SPEC);
  CHECK(exm_dataset_load((dir / "none").c_str(), &back, &rejected) == EXM_IO_FAILURE);
  exm_dataset_free(ds);
  exm_dataset_free(tr);
  exm_dataset_free(va);
  exm_dataset_free(back);
  exm_dataset_free(nullptr);
}

TEST_CASE("model lifecycle") {
  Dir dir;
  exm_model* fresh = nullptr;
  REQUIRE(exm_model_init(EXM_DIST171, 1, &fresh) == EXM_OK);
  CHECK(exm_model_parameter_count(fresh) == 30402);
  CHECK(exm_model_feature_mode(fresh) == EXM_DIST171);
  exm_model_free(fresh);

  exm_dataset* va = nullptr;
  exm_model* m = trained_model(&va);
  Str metrics;
  REQUIRE(exm_model_evaluate(m, va, 0.5, &metrics.p) == EXM_OK);
  const json mj = metrics.parse();
  const double tp = mj["tp"], fp = mj["fp"], fn = mj["fn"], tn = mj["tn"];
  CHECK(tp + fp + fn + tn == exm_dataset_size(va));
  CHECK(std::abs(mj["accuracy"].get<double>() - (tp + tn) / (tp + fp + fn + tn)) < 1e-12);
  CHECK(mj["accuracy"].get<double>() > 0.8);

  std::mt19937_64 rng(24);
  const std::string rec = record(random_points(rng), "q", 640, 480);
  int ab1 = -1, ab2 = -1;
  double p1 = -1, p2 = -1;
  REQUIRE(exm_model_predict_record(m, rec.c_str(), 0.5, &ab1, &p1) == EXM_OK);
  const auto x = featurize(rec, EXM_DIST171);
  REQUIRE(exm_model_predict(m, x.data(), x.size(), 0.5, &ab2, &p2) == EXM_OK);
  CHECK(p1 == p2);
  CHECK(ab1 == ab2);
  CHECK(ab1 == (p1 > 0.5 ? 1 : 0));
  CHECK(exm_model_predict(m, x.data(), 38, 0.5, &ab2, &p2) == EXM_DIM_MISMATCH);

  REQUIRE(exm_model_save(m, (dir / "m.bin").c_str()) == EXM_OK);
  exm_model* back = nullptr;
  REQUIRE(exm_model_load((dir / "m.bin").c_str(), &back) == EXM_OK);
  double p3 = -1;
  REQUIRE(exm_model_predict(back, x.data(), x.size(), 0.5, &ab2, &p3) == EXM_OK);
  CHECK(p3 == p1);
  {
    std::ofstream f(dir / "bad.bin", std::ios::binary);
    f << "garbage";
  }
  CHECK(exm_model_load((dir / "bad.bin").c_str(), &back) == EXM_CORRUPT_MODEL);
  CHECK(exm_model_train(m, va, nullptr, R"({"lr": 0})", nullptr, nullptr) == EXM_INVALID_ARGUMENT);
  exm_model_free(back);
  exm_model_free(m);
  exm_dataset_free(va);
}

TEST_CASE("training writes history and is deterministic") {
  Dir dir;
  exm_dataset* ds = nullptr;
  REQUIRE(exm_dataset_synthesize(R"({"n": 100, "seed": 4})", &ds) == EXM_OK);
  std::string first;
  for (int run = 0; run < 2; ++run) {
    exm_model* m = nullptr;
    REQUIRE(exm_model_init(EXM_DIST171, 2, &m) == EXM_OK);
    Str result;
    const std::string csv = dir / ("h" + std::to_string(run) + ".csv");
    REQUIRE(exm_model_train(m, ds, ds, R"({"epochs": 7})", csv.c_str(), &result.p) == EXM_OK);
    const json r = result.parse();
    CHECK(r["history"].size() == 7);
    std::ifstream in(csv);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 8);
    if (run == 0) {
      first = r.dump();
    } else {
      CHECK(r.dump() == first);
    }
    exm_model_free(m);
  }
  exm_dataset_free(ds);
}

TEST_CASE("sessions through the C interface") {
  exm_session* s = nullptr;
  REQUIRE(exm_session_new("stu", R"({"window_frames": 2, "cooldown_ms": 0, "lock_threshold": 1})", &s) ==
          EXM_OK);
  Str e1, e2, e3;
  REQUIRE(exm_session_observe(s, 1, 0.9, "stu:1", 0, 10, &e1.p) == EXM_OK);
  CHECK(e1.parse().size() == 1);
  REQUIRE(exm_session_observe(s, 1, 0.9, "stu:2", 0, 20, &e2.p) == EXM_OK);
  json ev = e2.parse();
  REQUIRE(ev.size() == 3);
  CHECK(ev[0]["kind"] == "FrameVerdict");
  CHECK(ev[1]["kind"] == "Violation");
  CHECK(ev[2]["kind"] == "Warning");
  REQUIRE(exm_session_observe(s, 1, 0.9, "stu:3", 0, 30, nullptr) == EXM_OK);
  REQUIRE(exm_session_observe(s, 1, 0.9, "stu:4", 0, 40, &e3.p) == EXM_OK);
  ev = e3.parse();
  REQUIRE(ev.size() == 4);
  CHECK(ev[3]["kind"] == "Locked");
  CHECK(ev[3]["payload"]["violation_count"] == 2);
  Str st;
  REQUIRE(exm_session_state(s, &st.p) == EXM_OK);
  CHECK(st.parse()["state"] == "Locked");

  Str log;
  REQUIRE(exm_session_log(s, &log.p) == EXM_OK);
  exm_session* r = nullptr;
  REQUIRE(exm_session_replay(log.p, "stu", R"({"window_frames": 2, "cooldown_ms": 0, "lock_threshold": 1})", &r) ==
          EXM_OK);
  Str st2;
  REQUIRE(exm_session_state(r, &st2.p) == EXM_OK);
  CHECK(st2.parse() == st.parse());

  CHECK(exm_session_end(s, "proctor", 50, nullptr) == EXM_OK);
  CHECK(exm_session_observe(s, 0, 0.1, "stu:5", 0, 60, nullptr) == EXM_SESSION_ENDED);
  CHECK(exm_session_unlock(s, "proctor", 70, nullptr) == EXM_INVALID_TRANSITION);
  CHECK(exm_session_new("x", R"({"window_frames": 0})", &r) != EXM_OK);
  CHECK(exm_session_replay("not json\n", "stu", nullptr, &r) == EXM_CORRUPT_LOG);
  exm_session_free(s);
  exm_session_free(r);
}

TEST_CASE("server, load harness and log replay") {
  Dir dir;
  exm_model* m = trained_model();
  REQUIRE(exm_model_save(m, (dir / "m.bin").c_str()) == EXM_OK);
  exm_model_free(m);

  exm_server* srv = nullptr;
  const json opts = {{"data_dir", dir / "data"}};
  REQUIRE(exm_server_start(opts.dump().c_str(), &srv) == EXM_OK);
  CHECK(exm_server_channel_port(srv) != 0);
  CHECK(exm_server_http_port(srv) != 0);
  json room = {{"room_id", "r1"},
               {"model_path", dir / "m.bin"},
               {"policy", {{"window_frames", 3}, {"cooldown_ms", 0}}},
               {"tokens", {{"student", "s"}, {"proctor", "p"}}}};
  REQUIRE(exm_server_create_room(srv, room.dump().c_str()) == EXM_OK);
  CHECK(exm_server_create_room(srv, room.dump().c_str()) == EXM_DUPLICATE_ROOM);
  room["room_id"] = "r2";
  room["model_path"] = dir / "absent.bin";
  CHECK(exm_server_create_room(srv, room.dump().c_str()) == EXM_MODEL_LOAD_FAILURE);

  const json cfg = {{"port", exm_server_channel_port(srv)}, {"room_id", "r1"},  {"token", "s"},
                    {"clients", 2},                         {"fps", 20},        {"duration_s", 0.5},
                    {"schedule", "abnormal:10"},            {"drain_s", 2.0}};
  Str report;
  REQUIRE(exm_run_load(cfg.dump().c_str(), (dir / "hist.csv").c_str(), &report.p) == EXM_OK);
  const json r = report.parse();
  CHECK(r["sent"] == 20);
  CHECK(r["verdicts"] == 20);
  CHECK(r["incomplete"] == false);
  CHECK(std::filesystem::exists(dir / "hist.csv"));

  Str snap;
  REQUIRE(exm_server_snapshot(srv, "r1", &snap.p) == EXM_OK);
  const json live = snap.parse();
  CHECK(live["students"].size() == 2);
  CHECK(exm_server_snapshot(srv, "nope", &snap.p) == EXM_UNKNOWN_ROOM);
  exm_server_free(srv);

  const std::string log = (dir.path / "data" / "rooms" / "r1.ndjson").string();
  REQUIRE(std::filesystem::exists(log));
  Str replayed;
  REQUIRE(exm_room_log_replay(log.c_str(), -1, &replayed.p) == EXM_OK);
  const json rp = replayed.parse();
  CHECK(rp["horizon"] == live["horizon"]);
  REQUIRE(rp["students"].size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rp["students"][i]["state"] == live["students"][i]["state"]);
    CHECK(rp["students"][i]["violation_count"] == live["students"][i]["violation_count"]);
  }
  CHECK(exm_run_load(R"({"port": 1, "room_id": "r1", "clients": 0})", nullptr, &report.p) == EXM_INVALID_ARGUMENT);
}

TEST_CASE("golden room log replay") {
  Str snap;
  REQUIRE(exm_room_log_replay(EXAMMON_FIXTURES "/golden_room.log", -1, &snap.p) == EXM_OK);
  const json s = snap.parse();
  CHECK(s["room_id"] == "golden");
  CHECK(s["horizon"] == 22);
  REQUIRE(s["students"].size() == 2);
  CHECK(s["students"][0]["student_id"] == "alice");
  CHECK(s["students"][0]["state"] == "Locked");
  CHECK(s["students"][0]["violation_count"] == 4);
  CHECK(s["students"][1]["student_id"] == "bob");
  CHECK(s["students"][1]["state"] == "Monitoring");
  CHECK(s["students"][1]["violation_count"] == 0);
  Str early;
  REQUIRE(exm_room_log_replay(EXAMMON_FIXTURES "/golden_room.log", 8, &early.p) == EXM_OK);
  CHECK(early.parse()["students"][0]["violation_count"] == 1);
  CHECK(exm_room_log_replay("/nonexistent/room.log", -1, &snap.p) == EXM_IO_FAILURE);
}
