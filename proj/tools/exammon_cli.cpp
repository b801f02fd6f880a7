// exammon command-line tool.
//
// Option values come from three layers, highest first: command-line flags,
// EXAMMON_<OPTION> environment variables (upper case, '-' as '_', e.g.
// EXAMMON_HTTP_PORT), and a JSON config file given by --config or
// EXAMMON_CONFIG. Config keys are option names; a key inside a section named
// after the subcommand beats the same key at the top level.

#include <signal.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "exammon/exammon.h"

using nlohmann::json;

namespace {

constexpr int kExitOperational = 1;
constexpr int kExitUsage = 2;

struct UsageError {
  std::string message;
};

struct OpError {
  exm_status status;
  std::string message;
};

void check(exm_status st) {
  if (st != EXM_OK) throw OpError{st, exm_last_error_message()};
}

// Owns a string returned by the library.
struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { exm_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OpError{EXM_IO_FAILURE, "cannot read " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw OpError{EXM_IO_FAILURE, "cannot write " + path};
}

std::optional<std::string> find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  if (const char* env = std::getenv("EXAMMON_CONFIG"); env != nullptr && *env != '\0') return std::string(env);
  return std::nullopt;
}

std::string env_name(const std::string& option) {
  std::string s = "EXAMMON_";
  for (char c : option) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string json_scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Installs config and environment values as option defaults so that flags
// given on the command line still win.
void apply_layers(CLI::App& sub, const json& config) {
  const std::string section = sub.get_name();
  for (CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    std::optional<std::string> value;
    if (config.contains(name) && !config[name].is_object()) value = json_scalar(config[name]);
    if (config.contains(section) && config[section].is_object() && config[section].contains(name)) {
      value = json_scalar(config[section][name]);
    }
    if (const char* env = std::getenv(env_name(name).c_str()); env != nullptr) value = std::string(env);
    if (value) {
      try {
        opt->default_val(*value);
      } catch (const CLI::Error& e) {
        throw UsageError{"bad value for " + name + " from config/environment: " + e.what()};
      }
    }
  }
}

exm_feature_mode mode_arg(const std::string& name) {
  exm_feature_mode m;
  if (exm_parse_feature_mode(name.c_str(), &m) != EXM_OK) {
    throw UsageError{"unknown feature mode '" + name + "' (RAW478, RAW19, DIST171)"};
  }
  return m;
}

void need(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError{std::string(flag) + " is required"};
}

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string metric(const json& v) { return v.is_number() ? fixed(v.get<double>()) : "n/a"; }

// ---- synth ----

struct SynthArgs {
  std::size_t n = 1200;
  double abnormal_ratio = 0.5;
  double theta_deg = 20.0;
  double jitter = 0.01;
  std::uint64_t seed = 7;
};

void add_synth_flags(CLI::App* app, SynthArgs& s, const std::string& prefix) {
  app->add_option("--" + prefix + "n", s.n, "Sample count")->capture_default_str();
  app->add_option("--" + prefix + "abnormal-ratio", s.abnormal_ratio, "Fraction of Abnormal samples")
      ->capture_default_str();
  app->add_option("--" + prefix + "theta", s.theta_deg, "Pose threshold angle in degrees")->capture_default_str();
  app->add_option("--" + prefix + "jitter", s.jitter, "Landmark jitter as a fraction of face size")
      ->capture_default_str();
  app->add_option("--" + prefix + "seed", s.seed, "Generator seed")->capture_default_str();
}

std::string synth_spec_json(const SynthArgs& s) {
  return json{{"n", s.n}, {"abnormal_ratio", s.abnormal_ratio}, {"theta_deg", s.theta_deg},
              {"jitter", s.jitter}, {"seed", s.seed}}
      .dump();
}

struct Dataset {
  exm_dataset* p = nullptr;
  ~Dataset() { exm_dataset_free(p); }
};

struct Model {
  exm_model* p = nullptr;
  ~Model() { exm_model_free(p); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exammon: exam monitoring from facial landmark streams"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  bool as_json = false;
  app.add_option("--config", config_path, "JSON config file (also EXAMMON_CONFIG)");
  app.add_flag("--json", as_json, "Print machine-readable JSON instead of text");

  // train
  auto* train = app.add_subcommand("train", "Train a classifier on a labeled frame dataset");
  std::string train_data, train_model = "model.exm", train_history = "history.csv", train_mode = "DIST171";
  bool train_synth = false, no_standardize = false;
  SynthArgs train_synth_args;
  int epochs = 100;
  double lr = 0.01, momentum = 0.9, split_ratio = 0.8, train_threshold = 0.5;
  std::size_t batch = 32;
  std::uint64_t init_seed = 1, shuffle_seed = 1, split_seed = 1;
  train->add_option("--data", train_data, "Labeled frame file");
  train->add_flag("--synth", train_synth, "Train on a generated dataset instead of --data");
  add_synth_flags(train, train_synth_args, "synth-");
  train->add_option("--mode", train_mode, "Feature mode: RAW478, RAW19 or DIST171")->capture_default_str();
  train->add_option("--out", train_model, "Model file to write")->capture_default_str();
  train->add_option("--history", train_history, "Per-epoch history CSV")->capture_default_str();
  train->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", lr, "Learning rate")->capture_default_str();
  train->add_option("--momentum", momentum, "Momentum")->capture_default_str();
  train->add_option("--batch", batch, "Mini-batch size")->capture_default_str();
  train->add_option("--split", split_ratio, "Training fraction of the dataset")->capture_default_str();
  train->add_option("--split-seed", split_seed, "Split shuffle seed")->capture_default_str();
  train->add_option("--seed", init_seed, "Weight initialization seed")->capture_default_str();
  train->add_option("--shuffle-seed", shuffle_seed, "Mini-batch shuffle seed")->capture_default_str();
  train->add_option("--threshold", train_threshold, "Decision threshold for validation metrics")
      ->capture_default_str();
  train->add_flag("--no-standardize", no_standardize, "Skip input standardization");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a labeled frame dataset");
  std::string eval_model, eval_data;
  double eval_threshold = 0.5;
  eval->add_option("--model", eval_model, "Model file");
  eval->add_option("--data", eval_data, "Labeled frame file");
  eval->add_option("--threshold", eval_threshold, "Decision threshold")->capture_default_str();

  // featurize
  auto* feat = app.add_subcommand("featurize", "Convert a frame file into feature vectors");
  std::string feat_in, feat_out, feat_mode = "DIST171";
  feat->add_option("--input", feat_in, "Frame file");
  feat->add_option("--out", feat_out, "Feature file to write");
  feat->add_option("--mode", feat_mode, "Feature mode: RAW478, RAW19 or DIST171")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled frame dataset");
  SynthArgs synth_args;
  std::string synth_out;
  add_synth_flags(synth, synth_args, "");
  synth->add_option("--out", synth_out, "Frame file to write");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the monitoring server until interrupted");
  std::string host = "127.0.0.1", data_dir = "exammon-data", ready_file, room_id, room_model,
              student_token, proctor_token, token_file, rooms_file;
  std::uint16_t port = 7400, http_port = 7401;
  bool fsync_log = false, no_reset = false;
  std::size_t queue = 64;
  std::uint32_t window = 15, lock_threshold = 3;
  std::int64_t cooldown_ms = 5000;
  double serve_threshold = 0.5;
  serve->add_option("--host", host, "Listen address")->capture_default_str();
  serve->add_option("--port", port, "Message channel port (0 = any)")->capture_default_str();
  serve->add_option("--http-port", http_port, "HTTP port (0 = any)")->capture_default_str();
  serve->add_option("--data-dir", data_dir, "Directory for room logs and images")->capture_default_str();
  serve->add_flag("--fsync", fsync_log, "fdatasync the room log after every append");
  serve->add_option("--queue", queue, "Frames buffered per student before dropping the oldest")
      ->capture_default_str();
  serve->add_option("--room", room_id, "Create this room at startup");
  serve->add_option("--model", room_model, "Model file for --room");
  serve->add_option("--student-token", student_token, "Student token for --room");
  serve->add_option("--proctor-token", proctor_token, "Proctor token for --room");
  serve->add_option("--token-file", token_file, "JSON file {\"student\": ..., \"proctor\": ...}");
  serve->add_option("--rooms-file", rooms_file, "JSON array of room definitions to create");
  serve->add_option("--window", window, "Consecutive abnormal frames per violation")->capture_default_str();
  serve->add_option("--cooldown-ms", cooldown_ms, "Minimum gap between violations")->capture_default_str();
  serve->add_option("--lock-threshold", lock_threshold, "Lock when violations exceed this")
      ->capture_default_str();
  serve->add_flag("--no-reset-on-unlock", no_reset, "Keep the violation count across unlocks");
  serve->add_option("--threshold", serve_threshold, "Decision threshold")->capture_default_str();
  serve->add_option("--ready-file", ready_file, "Write bound ports here once serving");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run the load harness against a server");
  std::string sim_host = "127.0.0.1", sim_room, sim_token, schedule, sim_features, report_out, histogram_out;
  std::uint16_t sim_port = 7400;
  std::size_t clients = 20, image_every = 0;
  double fps = 27.0, duration = 30.0, drain = 2.0;
  std::uint64_t sim_seed = 1;
  sim->add_option("--host", sim_host, "Server address")->capture_default_str();
  sim->add_option("--port", sim_port, "Server message channel port")->capture_default_str();
  sim->add_option("--room", sim_room, "Room id");
  sim->add_option("--token", sim_token, "Student token");
  sim->add_option("--clients", clients, "Concurrent clients")->capture_default_str();
  sim->add_option("--fps", fps, "Frames per second per client")->capture_default_str();
  sim->add_option("--duration", duration, "Streaming time in seconds")->capture_default_str();
  sim->add_option("--seed", sim_seed, "Frame generator seed")->capture_default_str();
  sim->add_option("--schedule", schedule, "Phase schedule file, or inline like normal:90,abnormal:30");
  sim->add_option("--features", sim_features, "Send precomputed features of this mode");
  sim->add_option("--image-every", image_every, "Attach an image to every n-th frame")->capture_default_str();
  sim->add_option("--drain", drain, "Seconds to wait for replies after the last frame")->capture_default_str();
  sim->add_option("--out", report_out, "Write the JSON report here");
  sim->add_option("--histogram", histogram_out, "Write a latency histogram CSV here");

  // replay
  auto* rep = app.add_subcommand("replay", "Rebuild a room's roster from its event log");
  std::string log_path;
  std::int64_t horizon = -1;
  rep->add_option("--log", log_path, "Room log file");
  rep->add_option("--horizon", horizon, "Replay records up to this room_seq (-1 = all)")->capture_default_str();

  try {
    json config = json::object();
    if (auto path = find_config_path(argc, argv)) {
      config = json::parse(read_file(*path), nullptr, false);
      if (config.is_discarded() || !config.is_object()) throw UsageError{"config " + *path + " is not a JSON object"};
    }
    for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) apply_layers(*sub, config);
    if (const char* env = std::getenv("EXAMMON_JSON"); env != nullptr && std::string(env) == "1") as_json = true;
    if (config.value("json", false)) as_json = true;

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int rc = app.exit(e);
      return rc == 0 ? 0 : kExitUsage;
    }

    auto emit = [&](const json& j, const std::string& text) {
      if (as_json) {
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << text;
      }
    };

    if (*train) {
      const exm_feature_mode mode = mode_arg(train_mode);
      Dataset all;
      std::size_t rejected = 0;
      if (train_synth) {
        check(exm_dataset_synthesize(synth_spec_json(train_synth_args).c_str(), &all.p));
      } else {
        need(train_data, "--data (or --synth)");
        check(exm_dataset_load(train_data.c_str(), &all.p, &rejected));
      }
      Dataset tr, va;
      check(exm_dataset_split(all.p, split_ratio, split_seed, &tr.p, &va.p));
      Model model;
      check(exm_model_init(mode, init_seed, &model.p));
      const json cfg = {{"epochs", epochs}, {"lr", lr}, {"momentum", momentum}, {"batch", batch},
                        {"shuffle_seed", shuffle_seed}, {"threshold", train_threshold},
                        {"standardize", !no_standardize}};
      OwnedString result;
      check(exm_model_train(model.p, tr.p, exm_dataset_size(va.p) > 0 ? va.p : nullptr, cfg.dump().c_str(),
                            train_history.c_str(), &result.p));
      check(exm_model_save(model.p, train_model.c_str()));
      const json r = json::parse(result.str());
      const json& fin = r["final"];
      json out = {{"mode", train_mode},
                  {"train_size", exm_dataset_size(tr.p)},
                  {"val_size", exm_dataset_size(va.p)},
                  {"rejected", rejected},
                  {"epochs", epochs},
                  {"parameters", exm_model_parameter_count(model.p)},
                  {"final", fin},
                  {"model", train_model},
                  {"history", train_history}};
      std::string text = "train " + std::to_string(exm_dataset_size(tr.p)) + "  val " +
                         std::to_string(exm_dataset_size(va.p)) + "  rejected " + std::to_string(rejected) +
                         "  parameters " + std::to_string(exm_model_parameter_count(model.p)) + "\n";
      text += "epoch " + std::to_string(epochs) + "  loss " + fixed(fin.value("loss", 0.0), 6) +
              "  val accuracy " + metric(fin["accuracy"]) + "  precision " + metric(fin["precision"]) +
              "  recall " + metric(fin["recall"]) + "\n";
      text += "model -> " + train_model + "\nhistory -> " + train_history + "\n";
      emit(out, text);
    } else if (*eval) {
      need(eval_model, "--model");
      need(eval_data, "--data");
      Model model;
      check(exm_model_load(eval_model.c_str(), &model.p));
      Dataset ds;
      std::size_t rejected = 0;
      check(exm_dataset_load(eval_data.c_str(), &ds.p, &rejected));
      OwnedString metrics;
      check(exm_model_evaluate(model.p, ds.p, eval_threshold, &metrics.p));
      json m = json::parse(metrics.str());
      m["samples"] = exm_dataset_size(ds.p);
      m["rejected"] = rejected;
      std::string text = "samples   " + std::to_string(exm_dataset_size(ds.p)) + " (rejected " +
                         std::to_string(rejected) + ")\n";
      text += "accuracy  " + metric(m["accuracy"]) + "\nprecision " + metric(m["precision"]) + "\nrecall    " +
              metric(m["recall"]) + "\n";
      text += "TP " + m["tp"].dump() + "  FP " + m["fp"].dump() + "  FN " + m["fn"].dump() + "  TN " +
              m["tn"].dump() + "\n";
      emit(m, text);
    } else if (*feat) {
      need(feat_in, "--input");
      need(feat_out, "--out");
      std::size_t written = 0, rejected = 0;
      check(exm_featurize_file(feat_in.c_str(), mode_arg(feat_mode), feat_out.c_str(), &written, &rejected));
      emit({{"written", written}, {"rejected", rejected}, {"mode", feat_mode}, {"out", feat_out}},
           "wrote " + std::to_string(written) + " " + feat_mode + " vectors to " + feat_out + " (rejected " +
               std::to_string(rejected) + ")\n");
    } else if (*synth) {
      need(synth_out, "--out");
      Dataset ds;
      check(exm_dataset_synthesize(synth_spec_json(synth_args).c_str(), &ds.p));
      check(exm_dataset_save(ds.p, synth_out.c_str()));
      const std::size_t abn = exm_dataset_count_label(ds.p, 1);
      const std::size_t total = exm_dataset_size(ds.p);
      emit({{"samples", total}, {"abnormal", abn}, {"normal", total - abn}, {"out", synth_out}},
           "wrote " + std::to_string(total) + " frames (" + std::to_string(total - abn) + " normal, " +
               std::to_string(abn) + " abnormal) to " + synth_out + "\n");
    } else if (*serve) {
      std::vector<json> rooms;
      if (!rooms_file.empty()) {
        json arr = json::parse(read_file(rooms_file), nullptr, false);
        if (!arr.is_array()) throw UsageError{"--rooms-file must hold a JSON array"};
        for (const json& r : arr) rooms.push_back(r);
      }
      if (config.contains("rooms") && config["rooms"].is_array()) {
        for (const json& r : config["rooms"]) rooms.push_back(r);
      }
      if (!room_id.empty()) {
        need(room_model, "--model");
        if (!token_file.empty()) {
          json t = json::parse(read_file(token_file), nullptr, false);
          if (!t.is_object()) throw UsageError{"--token-file must hold a JSON object"};
          if (student_token.empty()) student_token = t.value("student", "");
          if (proctor_token.empty()) proctor_token = t.value("proctor", "");
        }
        need(student_token, "--student-token (or --token-file)");
        need(proctor_token, "--proctor-token (or --token-file)");
        rooms.push_back({{"room_id", room_id},
                         {"model_path", room_model},
                         {"threshold", serve_threshold},
                         {"policy",
                          {{"window_frames", window},
                           {"cooldown_ms", cooldown_ms},
                           {"lock_threshold", lock_threshold},
                           {"reset_on_unlock", !no_reset}}},
                         {"tokens", {{"student", student_token}, {"proctor", proctor_token}}}});
      }

      sigset_t stop_signals;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

      const json opts = {{"host", host}, {"channel_port", port}, {"http_port", http_port},
                         {"data_dir", data_dir}, {"fsync", fsync_log}, {"queue_capacity", queue}};
      exm_server* server = nullptr;
      check(exm_server_start(opts.dump().c_str(), &server));
      std::unique_ptr<exm_server, void (*)(exm_server*)> guard(server, exm_server_free);
      for (const json& r : rooms) check(exm_server_create_room(server, r.dump().c_str()));

      json ready = {{"channel_port", exm_server_channel_port(server)},
                    {"http_port", exm_server_http_port(server)},
                    {"pid", ::getpid()}};
      json room_ids = json::array();
      for (const json& r : rooms) room_ids.push_back(r.value("room_id", ""));
      ready["rooms"] = room_ids;
      if (!ready_file.empty()) {
        const std::string tmp = ready_file + ".tmp";
        write_file(tmp, ready.dump() + "\n");
        std::filesystem::rename(tmp, ready_file);
      }
      emit(ready, "serving on " + host + " channel " + std::to_string(exm_server_channel_port(server)) +
                      ", http " + std::to_string(exm_server_http_port(server)) + "\n");
      std::cout.flush();
      int sig = 0;
      sigwait(&stop_signals, &sig);
      guard.reset();
      if (!as_json) std::cout << "stopped\n";
    } else if (*sim) {
      need(sim_room, "--room");
      json cfg = {{"host", sim_host}, {"port", sim_port}, {"room_id", sim_room}, {"token", sim_token},
                  {"clients", clients}, {"fps", fps}, {"duration_s", duration}, {"seed", sim_seed},
                  {"image_every", image_every}, {"drain_s", drain}};
      if (!schedule.empty()) {
        cfg["schedule"] = std::filesystem::is_regular_file(schedule) ? read_file(schedule) : schedule;
      }
      if (!sim_features.empty()) cfg["features"] = sim_features;
      OwnedString report;
      check(exm_run_load(cfg.dump().c_str(), histogram_out.empty() ? nullptr : histogram_out.c_str(), &report.p));
      json r = json::parse(report.str());
      if (!report_out.empty()) write_file(report_out, r.dump(2) + "\n");
      const json& lat = r["latency_ms"];
      std::string text = "clients " + r["clients"].dump() + " at " + fixed(fps, 1) + " fps for " +
                         fixed(duration, 1) + " s\n";
      text += "sent " + r["sent"].dump() + "  acknowledged " + r["acknowledged"].dump() + " (" +
              fixed(100.0 * r["ack_ratio"].get<double>(), 1) + "%)  dropped " + r["dropped"].dump() +
              "  errors " + r["errors"].dump() + "  in flight " + r["in_flight"].dump() + "\n";
      text += "verdicts/s " + fixed(r["verdicts_per_s"].get<double>(), 1) + "  client fps min " +
              fixed(r["client_fps"]["min"].get<double>(), 2) + " mean " +
              fixed(r["client_fps"]["mean"].get<double>(), 2) + "\n";
      text += "latency ms  p50 " + fixed(lat["p50"].get<double>(), 2) + "  p95 " + fixed(lat["p95"].get<double>(), 2) +
              "  p99 " + fixed(lat["p99"].get<double>(), 2) + "  max " + fixed(lat["max"].get<double>(), 2) + "\n";
      text += "violations " + r["violations"].dump() + "  locks " + r["locks"].dump() + "\n";
      if (r["incomplete"].get<bool>()) {
        text += "INCOMPLETE:";
        for (const auto& p : r["problems"]) text += " " + p.get<std::string>() + ";";
        text += "\n";
      }
      emit(r, text);
      if (r["incomplete"].get<bool>()) return kExitOperational;
    } else if (*rep) {
      need(log_path, "--log");
      OwnedString snap;
      check(exm_room_log_replay(log_path.c_str(), horizon, &snap.p));
      const json s = json::parse(snap.str());
      std::string text = "room " + s["room_id"].get<std::string>() + "  horizon " + s["horizon"].dump() +
                         (s["truncated_tail"].get<bool>() ? "  (truncated tail discarded)" : "") + "\n";
      char row[256];
      std::snprintf(row, sizeof(row), "%-24s %-10s %10s %10s %8s\n", "student", "state", "violations",
                    "p_abnormal", "no_face");
      text += row;
      for (const json& st : s["students"]) {
        const std::string p = st["last_p_abnormal"].is_number() ? fixed(st["last_p_abnormal"].get<double>()) : "-";
        std::snprintf(row, sizeof(row), "%-24s %-10s %10s %10s %8s\n", st["student_id"].get<std::string>().c_str(),
                      st["state"].get<std::string>().c_str(), st["violation_count"].dump().c_str(), p.c_str(),
                      st["no_face"].get<bool>() ? "yes" : "no");
        text += row;
      }
      emit(s, text);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.message << "\n";
    return kExitUsage;
  } catch (const OpError& e) {
    std::cerr << "error: " << exm_status_name(e.status) << ": " << e.message << "\n";
    return kExitOperational;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOperational;
  }
}
