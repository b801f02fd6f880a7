#include "exammon/exammon.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <fstream>
#include <memory>
#include <string>

#include "core/classifier.hpp"
#include "core/dataset.hpp"
#include "core/errors.hpp"
#include "core/frame_record.hpp"
#include "core/session.hpp"
#include "core/synth.hpp"
#include "service/harness.hpp"
#include "service/room_log.hpp"
#include "service/server.hpp"

using nlohmann::json;
using namespace exammon;

struct exm_dataset {
  Dataset ds;
};

struct exm_model {
  ClassifierModel model;
};

struct exm_session {
  ExamSession session;
};

struct exm_server {
  std::unique_ptr<MonitorServer> server;
};

namespace {

thread_local std::string g_last_error;

exm_status fail(ErrorCode code, const std::string& message) {
  g_last_error = message;
  return static_cast<exm_status>(code);
}

// Runs fn, mapping exceptions to status codes.
template <typename Fn>
exm_status guard(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return EXM_OK;
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const json::exception& e) {
    return fail(ErrorCode::kInvalidArgument, std::string("bad JSON: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(ErrorCode::kInternal, "out of memory");
  } catch (const std::exception& e) {
    return fail(ErrorCode::kInternal, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

json parse_optional_json(const char* text) {
  if (text == nullptr || *text == '\0') return json::object();
  json j = json::parse(text);
  require(j.is_object(), "expected a JSON object");
  return j;
}

ViolationPolicy policy_from_text(const char* text) {
  return policy_from_json(parse_optional_json(text));
}

json events_to_json(const std::vector<SessionEvent>& events) {
  json arr = json::array();
  for (const auto& e : events) arr.push_back(event_to_json(e));
  return arr;
}

json metrics_to_json(const Metrics& m) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(); };
  return {{"accuracy", num(m.accuracy)}, {"precision", num(m.precision)}, {"recall", num(m.recall)},
          {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}};
}

void write_text(const char* path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, std::string("cannot write ") + path);
  out << text;
  if (!out) throw Error(ErrorCode::kIoFailure, std::string("write failed: ") + path);
}

void emit(char** out, const json& j) {
  if (out != nullptr) *out = dup_string(j.dump());
}

}  // namespace

extern "C" {

const char* exm_version(void) { return "0.1.0"; }

const char* exm_status_name(exm_status status) {
  return error_code_name(static_cast<ErrorCode>(status));
}

const char* exm_last_error_message(void) { return g_last_error.c_str(); }

void exm_string_free(char* s) { std::free(s); }

exm_status exm_parse_feature_mode(const char* name, exm_feature_mode* out) {
  return guard([&] {
    require(name != nullptr && out != nullptr, "null argument");
    *out = static_cast<exm_feature_mode>(parse_feature_mode(name));
  });
}

size_t exm_feature_dims(exm_feature_mode mode) {
  if (mode < EXM_RAW478 || mode > EXM_DIST171) return 0;
  return feature_dims(static_cast<FeatureMode>(mode));
}

exm_status exm_featurize_record(const char* frame_json, exm_feature_mode mode, double* out,
                                size_t capacity, size_t* len) {
  return guard([&] {
    require(frame_json != nullptr, "null frame");
    require(mode >= EXM_RAW478 && mode <= EXM_DIST171, "unknown feature mode");
    const FrameRecord rec = parse_frame_record(frame_json);
    const FeatureVector fv = featurize(validate_frame(rec.frame), static_cast<FeatureMode>(mode),
                                       KeypointSelection::default_selection());
    if (len != nullptr) *len = fv.values.size();
    require(out != nullptr && capacity >= fv.values.size(), "output buffer too small");
    std::memcpy(out, fv.values.data(), fv.values.size() * sizeof(double));
  });
}

exm_status exm_featurize_file(const char* frames_path, exm_feature_mode mode, const char* out_path,
                              size_t* written, size_t* rejected) {
  return guard([&] {
    require(frames_path != nullptr && out_path != nullptr, "null path");
    require(mode >= EXM_RAW478 && mode <= EXM_DIST171, "unknown feature mode");
    const auto fm = static_cast<FeatureMode>(mode);
    std::ifstream in(frames_path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIoFailure, std::string("cannot open ") + frames_path);
    std::string out;
    std::string line;
    std::size_t n_out = 0;
    std::size_t n_bad = 0;
    std::size_t line_no = 0;
    bool any = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      any = true;
      FrameRecord rec;
      try {
        rec = parse_frame_record(line);
      } catch (const Error& e) {
        throw Error(e.code(), std::string(frames_path) + ":" + std::to_string(line_no) + ": " + e.what());
      }
      FeatureVector fv;
      try {
        fv = featurize(validate_frame(rec.frame), fm, KeypointSelection::default_selection());
      } catch (const Error&) {
        ++n_bad;
        continue;
      }
      json j = {{"id", rec.frame.frame_id}, {"mode", feature_mode_name(fm)}, {"features", fv.values}};
      if (rec.label) j["label"] = label_name(*rec.label);
      out += j.dump();
      out += '\n';
      ++n_out;
    }
    if (!any) throw Error(ErrorCode::kEmptyInput, std::string(frames_path) + " has no records");
    write_text(out_path, out);
    if (written != nullptr) *written = n_out;
    if (rejected != nullptr) *rejected = n_bad;
  });
}

exm_status exm_dataset_load(const char* path, exm_dataset** out, size_t* rejected) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "null argument");
    LoadResult r = load_dataset(path);
    *out = new exm_dataset{std::move(r.dataset)};
    if (rejected != nullptr) *rejected = r.rejected;
  });
}

exm_status exm_dataset_synthesize(const char* spec_json, exm_dataset** out) {
  return guard([&] {
    require(out != nullptr, "null argument");
    const json j = parse_optional_json(spec_json);
    SynthSpec s;
    s.n = j.value("n", s.n);
    s.abnormal_ratio = j.value("abnormal_ratio", s.abnormal_ratio);
    s.theta_deg = j.value("theta_deg", s.theta_deg);
    s.jitter = j.value("jitter", s.jitter);
    s.seed = j.value("seed", s.seed);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    *out = new exm_dataset{synthesize(s)};
  });
}

exm_status exm_dataset_save(const exm_dataset* ds, const char* path) {
  return guard([&] {
    require(ds != nullptr && path != nullptr, "null argument");
    save_dataset(ds->ds, path);
  });
}

size_t exm_dataset_size(const exm_dataset* ds) { return ds == nullptr ? 0 : ds->ds.size(); }

size_t exm_dataset_count_label(const exm_dataset* ds, int abnormal) {
  if (ds == nullptr) return 0;
  const Label want = abnormal ? Label::kAbnormal : Label::kNormal;
  size_t n = 0;
  for (const auto& s : ds->ds.samples) n += s.label == want;
  return n;
}

exm_status exm_dataset_split(const exm_dataset* ds, double ratio, uint64_t seed, exm_dataset** train,
                             exm_dataset** val) {
  return guard([&] {
    require(ds != nullptr && train != nullptr && val != nullptr, "null argument");
    auto [a, b] = split(ds->ds, ratio, seed);
    auto ta = std::make_unique<exm_dataset>(exm_dataset{std::move(a)});
    auto tb = std::make_unique<exm_dataset>(exm_dataset{std::move(b)});
    *train = ta.release();
    *val = tb.release();
  });
}

void exm_dataset_free(exm_dataset* ds) { delete ds; }

exm_status exm_model_init(exm_feature_mode mode, uint64_t seed, exm_model** out) {
  return guard([&] {
    require(out != nullptr, "null argument");
    require(mode >= EXM_RAW478 && mode <= EXM_DIST171, "unknown feature mode");
    const auto fm = static_cast<FeatureMode>(mode);
    *out = new exm_model{init_model(default_layer_dims(fm), fm, seed)};
  });
}

exm_status exm_model_load(const char* path, exm_model** out) {
  return guard([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = new exm_model{load_model(path)};
  });
}

exm_status exm_model_save(const exm_model* model, const char* path) {
  return guard([&] {
    require(model != nullptr && path != nullptr, "null argument");
    save_model(model->model, path);
  });
}

exm_feature_mode exm_model_feature_mode(const exm_model* model) {
  return model == nullptr ? EXM_DIST171 : static_cast<exm_feature_mode>(model->model.feature_mode);
}

size_t exm_model_parameter_count(const exm_model* model) {
  return model == nullptr ? 0 : model->model.parameter_count();
}

void exm_model_free(exm_model* model) { delete model; }

exm_status exm_model_train(exm_model* model, const exm_dataset* train_ds, const exm_dataset* val_ds,
                           const char* config_json, const char* history_csv_path, char** result_json) {
  return guard([&] {
    require(model != nullptr && train_ds != nullptr, "null argument");
    const json j = parse_optional_json(config_json);
    TrainConfig cfg;
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("lr", cfg.learning_rate);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.batch_size = j.value("batch", cfg.batch_size);
    cfg.shuffle_seed = j.value("shuffle_seed", cfg.shuffle_seed);
    cfg.threshold = j.value("threshold", cfg.threshold);
    cfg.standardize = j.value("standardize", cfg.standardize);
    const ClassifierModel& m = model->model;
    const auto train_ex = to_examples(train_ds->ds, m.feature_mode, m.selection);
    std::vector<Example> val_ex;
    if (val_ds != nullptr) val_ex = to_examples(val_ds->ds, m.feature_mode, m.selection);
    TrainResult r = train(m, train_ex, val_ex, cfg);
    if (history_csv_path != nullptr) write_text(history_csv_path, history_csv(r.history));
    if (result_json != nullptr) {
      json hist = json::array();
      for (const auto& e : r.history) {
        json row = metrics_to_json(e.val);
        row["epoch"] = e.epoch;
        row["loss"] = e.loss;
        hist.push_back(std::move(row));
      }
      json out = {{"history", hist}, {"final", hist.empty() ? json() : hist.back()}};
      *result_json = dup_string(out.dump());
    }
    model->model = std::move(r.model);
  });
}

exm_status exm_model_evaluate(const exm_model* model, const exm_dataset* ds, double threshold,
                              char** metrics_json) {
  return guard([&] {
    require(model != nullptr && ds != nullptr && metrics_json != nullptr, "null argument");
    const ClassifierModel& m = model->model;
    const Metrics met = evaluate(m, to_examples(ds->ds, m.feature_mode, m.selection), threshold);
    *metrics_json = dup_string(metrics_to_json(met).dump());
  });
}

exm_status exm_model_predict(const exm_model* model, const double* features, size_t len, double threshold,
                             int* abnormal, double* p_abnormal) {
  return guard([&] {
    require(model != nullptr && (features != nullptr || len == 0), "null argument");
    const Prediction p = predict(model->model,
                                 FeatureVector{model->model.feature_mode,
                                               std::vector<double>(features, features + len)},
                                 threshold);
    if (abnormal != nullptr) *abnormal = p.label == Label::kAbnormal;
    if (p_abnormal != nullptr) *p_abnormal = p.p_abnormal;
  });
}

exm_status exm_model_predict_record(const exm_model* model, const char* frame_json, double threshold,
                                    int* abnormal, double* p_abnormal) {
  return guard([&] {
    require(model != nullptr && frame_json != nullptr, "null argument");
    const ClassifierModel& m = model->model;
    const FrameRecord rec = parse_frame_record(frame_json);
    const Prediction p =
        predict(m, featurize(validate_frame(rec.frame), m.feature_mode, m.selection), threshold);
    if (abnormal != nullptr) *abnormal = p.label == Label::kAbnormal;
    if (p_abnormal != nullptr) *p_abnormal = p.p_abnormal;
  });
}

exm_status exm_session_new(const char* student_id, const char* policy_json, exm_session** out) {
  return guard([&] {
    require(out != nullptr, "null argument");
    *out = new exm_session{new_session(student_id ? student_id : "", policy_from_text(policy_json))};
  });
}

namespace {

exm_status apply(exm_session* s, char** events_json, const std::function<Transition(ExamSession)>& step) {
  return guard([&] {
    require(s != nullptr, "null session");
    Transition t = step(s->session);
    if (events_json != nullptr) *events_json = dup_string(events_to_json(t.events).dump());
    s->session = std::move(t.session);
  });
}

}  // namespace

exm_status exm_session_observe(exm_session* s, int abnormal, double p_abnormal, const char* frame_id,
                               int no_face, int64_t ts_ms, char** events_json) {
  Verdict v{abnormal ? Label::kAbnormal : Label::kNormal, p_abnormal, frame_id ? frame_id : "",
            no_face != 0};
  return apply(s, events_json, [&](ExamSession cur) { return observe(std::move(cur), v, ts_ms); });
}

exm_status exm_session_unlock(exm_session* s, const char* actor, int64_t ts_ms, char** events_json) {
  const std::string who = actor ? actor : "";
  return apply(s, events_json, [&](ExamSession cur) { return proctor_unlock(std::move(cur), who, ts_ms); });
}

exm_status exm_session_end(exm_session* s, const char* actor, int64_t ts_ms, char** events_json) {
  const std::string who = actor ? actor : "";
  return apply(s, events_json, [&](ExamSession cur) { return proctor_end(std::move(cur), who, ts_ms); });
}

exm_status exm_session_state(const exm_session* s, char** state_json) {
  return guard([&] {
    require(s != nullptr && state_json != nullptr, "null argument");
    const ExamSession& x = s->session;
    json j = {{"student_id", x.student_id},
              {"state", session_state_name(x.state)},
              {"violation_count", x.violation_count},
              {"consecutive_abnormal", x.consecutive_abnormal},
              {"cooldown_until_ms", x.cooldown_until_ms ? json(*x.cooldown_until_ms) : json()},
              {"next_seq", x.next_seq},
              {"policy", policy_to_json(x.policy)}};
    *state_json = dup_string(j.dump());
  });
}

exm_status exm_session_log(const exm_session* s, char** ndjson) {
  return guard([&] {
    require(s != nullptr && ndjson != nullptr, "null argument");
    std::string out;
    for (const auto& e : s->session.event_log) {
      out += event_to_json(e).dump();
      out += '\n';
    }
    *ndjson = dup_string(out);
  });
}

exm_status exm_session_replay(const char* ndjson, const char* student_id, const char* policy_json,
                              exm_session** out) {
  return guard([&] {
    require(ndjson != nullptr && out != nullptr, "null argument");
    std::vector<SessionEvent> events;
    std::string_view rest(ndjson);
    while (!rest.empty()) {
      const std::size_t nl = rest.find('\n');
      const std::string_view line = rest.substr(0, nl);
      rest = nl == std::string_view::npos ? std::string_view() : rest.substr(nl + 1);
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::kCorruptLog, "event line is not JSON");
      events.push_back(event_from_json(j));
    }
    *out = new exm_session{replay(events, policy_from_text(policy_json), student_id ? student_id : "")};
  });
}

void exm_session_free(exm_session* s) { delete s; }

exm_status exm_room_log_replay(const char* path, int64_t horizon, char** snapshot_json) {
  return guard([&] {
    require(path != nullptr && snapshot_json != nullptr, "null argument");
    std::optional<std::uint64_t> h;
    if (horizon >= 0) h = static_cast<std::uint64_t>(horizon);
    const RoomReplay r = replay_room_log_file(path, h);
    json j = roster_to_json(r.snapshot);
    j["policy"] = policy_to_json(r.policy);
    j["threshold"] = r.threshold;
    j["truncated_tail"] = r.truncated_tail;
    j["discarded_records"] = r.discarded_records;
    *snapshot_json = dup_string(j.dump());
  });
}

exm_status exm_server_start(const char* options_json, exm_server** out) {
  return guard([&] {
    require(out != nullptr, "null argument");
    const json j = parse_optional_json(options_json);
    ServerOptions o;
    o.host = j.value("host", o.host);
    o.channel_port = j.value("channel_port", o.channel_port);
    o.http_port = j.value("http_port", o.http_port);
    o.data_dir = j.value("data_dir", o.data_dir.string());
    o.fsync_log = j.value("fsync", o.fsync_log);
    o.queue_capacity = j.value("queue_capacity", o.queue_capacity);
    auto srv = std::make_unique<exm_server>();
    srv->server = std::make_unique<MonitorServer>(std::move(o));
    srv->server->start();
    *out = srv.release();
  });
}

uint16_t exm_server_channel_port(const exm_server* server) {
  return server == nullptr ? 0 : server->server->channel_port();
}

uint16_t exm_server_http_port(const exm_server* server) {
  return server == nullptr ? 0 : server->server->http_port();
}

exm_status exm_server_create_room(exm_server* server, const char* room_json) {
  return guard([&] {
    require(server != nullptr && room_json != nullptr, "null argument");
    server->server->create_room(room_spec_from_json(json::parse(room_json)));
  });
}

exm_status exm_server_snapshot(const exm_server* server, const char* room_id, char** snapshot_json) {
  return guard([&] {
    require(server != nullptr && room_id != nullptr && snapshot_json != nullptr, "null argument");
    *snapshot_json = dup_string(roster_to_json(server->server->snapshot(room_id)).dump());
  });
}

void exm_server_free(exm_server* server) {
  if (server == nullptr) return;
  server->server->stop();
  delete server;
}

exm_status exm_run_load(const char* config_json, const char* histogram_csv, char** report_json) {
  return guard([&] {
    require(report_json != nullptr, "null argument");
    const json j = parse_optional_json(config_json);
    LoadConfig c;
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.room_id = j.value("room_id", c.room_id);
    c.token = j.value("token", c.token);
    c.clients = j.value("clients", c.clients);
    c.fps = j.value("fps", c.fps);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.seed = j.value("seed", c.seed);
    if (auto it = j.find("schedule"); it != j.end() && !it->is_null()) {
      c.schedule = parse_schedule(it->is_string() ? it->get<std::string>() : it->dump());
    }
    if (auto it = j.find("features"); it != j.end() && !it->is_null()) {
      c.features = parse_feature_mode(it->get<std::string>());
    }
    c.image_every = j.value("image_every", c.image_every);
    c.drain_s = j.value("drain_s", c.drain_s);
    c.student_prefix = j.value("student_prefix", c.student_prefix);
    const LoadReport r = run_load(c);
    if (histogram_csv != nullptr) write_text(histogram_csv, latency_histogram_csv(r));
    emit(report_json, load_report_to_json(r));
  });
}

}  // extern "C"
