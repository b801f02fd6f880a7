#include "service/server.hpp"

#include <sys/socket.h>

#include <charconv>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <regex>

#include <httplib.h>

#include "core/errors.hpp"

namespace exammon {

using nlohmann::json;
namespace fs = std::filesystem;

std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

namespace {

json error_message(ErrorCode code, const std::string& message,
                   std::optional<std::uint64_t> seq = std::nullopt) {
  json j = {{"type", "error"}, {"code", error_code_name(code)}, {"message", message}};
  if (seq) j["seq"] = *seq;
  return j;
}

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownRoom:
    case ErrorCode::kUnknownStudent: return 404;
    case ErrorCode::kAuthFailure: return 401;
    case ErrorCode::kDuplicateRoom: return 409;
    case ErrorCode::kModelLoadFailure: return 422;
    case ErrorCode::kIoFailure:
    case ErrorCode::kInternal: return 500;
    default: return 400;
  }
}

bool valid_room_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9_-][A-Za-z0-9_.-]{0,63}");
  return std::regex_match(id, re);
}

}  // namespace

// One client of the message channel. The reader thread parses lines; a
// student's frames go through a bounded queue to a worker thread (one frame
// at a time per student); all outbound lines go through the writer thread so
// fanout never blocks the sender.
class Connection : public MessageSink, public std::enable_shared_from_this<Connection> {
 public:
  Connection(MonitorServer& server, net::UniqueFd fd) : server_(server), fd_(std::move(fd)) {}

  ~Connection() override { join(); }

  void start() {
    auto self = shared_from_this();
    writer_ = std::thread([self] { self->write_loop(); });
    reader_ = std::thread([self] { self->read_loop(); });
  }

  void send(std::string line) override {
    {
      std::lock_guard lock(out_mu_);
      if (out_closed_) return;
      outbox_.push_back(std::move(line));
    }
    out_cv_.notify_one();
  }

  void shutdown() { ::shutdown(fd_.get(), SHUT_RDWR); }

  bool finished() const { return reader_done_ && writer_done_; }

  void join() {
    if (reader_.joinable() && reader_.get_id() != std::this_thread::get_id()) reader_.join();
    if (writer_.joinable() && writer_.get_id() != std::this_thread::get_id()) writer_.join();
  }

 private:
  void read_loop() {
    net::LineReader rd(fd_.get(), server_.opts_.max_line_bytes);
    std::string line;
    bool keep_going = true;
    while (keep_going) {
      const auto status = rd.next(line);
      if (status == net::LineReader::Status::kTooLong) {
        send(error_message(ErrorCode::kMalformedRecord, "line too long").dump());
        break;
      }
      if (status == net::LineReader::Status::kClosed) break;
      if (line.empty()) continue;
      keep_going = handle_line(line);
    }
    close_inbox();
    if (worker_.joinable()) worker_.join();
    if (room_) {
      if (role_ == Role::kStudent) {
        room_->detach_student(id_, this);
      } else {
        room_->unsubscribe_proctor(this);
      }
    }
    {
      std::lock_guard lock(out_mu_);
      out_closed_ = true;
    }
    out_cv_.notify_one();
    reader_done_ = true;
  }

  // False closes the connection.
  bool handle_line(const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      send(error_message(ErrorCode::kMalformedRecord, "message is not a JSON object").dump());
      return true;
    }
    const std::string type = j.value("type", "");
    if (!room_) {
      if (type != "hello") {
        send(error_message(ErrorCode::kAuthFailure, "first message must be hello").dump());
        return false;
      }
      return handle_hello(j);
    }
    if (type == "frame" && role_ == Role::kStudent) {
      handle_frame(j);
    } else if (type == "action" && role_ == Role::kProctor) {
      handle_action(j);
    } else {
      send(error_message(ErrorCode::kInvalidArgument, "unexpected message type '" + type + "'").dump());
    }
    return true;
  }

  bool handle_hello(const json& j) {
    try {
      const std::string role = j.at("role").get<std::string>();
      const std::string token = j.at("token").get<std::string>();
      const std::string room_id = j.at("room_id").get<std::string>();
      const std::string id = j.value("id", "");
      if (role != "student" && role != "proctor") {
        throw Error(ErrorCode::kAuthFailure, "unknown role '" + role + "'");
      }
      std::shared_ptr<Room> room = server_.room(room_id);
      const Role r = role == "student" ? Role::kStudent : Role::kProctor;
      if (!room->authorize(r, token)) throw Error(ErrorCode::kAuthFailure, "invalid token for " + role);
      role_ = r;
      id_ = id;
      if (r == Role::kStudent) {
        send(room->join_student(id, shared_from_this(), wall_clock_ms()).dump());
        room_ = std::move(room);
        auto self = shared_from_this();
        worker_ = std::thread([self] { self->work_loop(); });
      } else {
        send(json{{"type", "welcome"}, {"role", "proctor"}, {"room_id", room_id}, {"id", id}}.dump());
        room->subscribe_proctor(shared_from_this());
        room_ = std::move(room);
      }
      return true;
    } catch (const Error& e) {
      send(error_message(e.code(), e.what()).dump());
    } catch (const json::exception& e) {
      send(error_message(ErrorCode::kAuthFailure, std::string("bad hello: ") + e.what()).dump());
    }
    return false;
  }

  void handle_frame(const json& j) {
    FrameMessage msg;
    try {
      msg = frame_message_from_json(j);
    } catch (const Error& e) {
      std::optional<std::uint64_t> seq;
      if (auto it = j.find("seq"); it != j.end() && it->is_number_unsigned()) seq = it->get<std::uint64_t>();
      send(error_message(e.code(), e.what(), seq).dump());
      return;
    }
    std::optional<std::uint64_t> dropped;
    {
      std::lock_guard lock(in_mu_);
      if (inbox_.size() >= server_.opts_.queue_capacity) {
        dropped = inbox_.front().seq;
        inbox_.pop_front();
      }
      inbox_.push_back(std::move(msg));
    }
    in_cv_.notify_one();
    if (dropped) {
      room_->record_drop(id_);
      send(json{{"type", "dropped"}, {"seq", *dropped}}.dump());
    }
  }

  void handle_action(const json& j) {
    try {
      const std::string student = j.at("student_id").get<std::string>();
      const std::string action = j.at("action").get<std::string>();
      send(room_->proctor_action(student, action, id_, wall_clock_ms()).dump());
    } catch (const Error& e) {
      json err = error_message(e.code(), e.what());
      err["student_id"] = j.value("student_id", "");
      send(err.dump());
    } catch (const json::exception& e) {
      send(error_message(ErrorCode::kMalformedRecord, std::string("bad action: ") + e.what()).dump());
    }
  }

  void work_loop() {
    for (;;) {
      FrameMessage msg;
      {
        std::unique_lock lock(in_mu_);
        in_cv_.wait(lock, [&] { return in_closed_ || !inbox_.empty(); });
        if (inbox_.empty()) return;
        msg = std::move(inbox_.front());
        inbox_.pop_front();
      }
      try {
        IngestResult r = room_->ingest(id_, msg);
        send(r.reply.dump());
        for (const json& f : r.followups) send(f.dump());
      } catch (const Error& e) {
        send(error_message(e.code(), e.what(), msg.seq).dump());
      } catch (const std::exception& e) {
        send(error_message(ErrorCode::kInternal, e.what(), msg.seq).dump());
      }
    }
  }

  void close_inbox() {
    {
      std::lock_guard lock(in_mu_);
      in_closed_ = true;
    }
    in_cv_.notify_one();
  }

  void write_loop() {
    std::deque<std::string> batch;
    std::string buf;
    bool broken = false;
    for (;;) {
      {
        std::unique_lock lock(out_mu_);
        out_cv_.wait(lock, [&] { return out_closed_ || !outbox_.empty(); });
        if (outbox_.empty()) break;
        batch.swap(outbox_);
      }
      if (broken) {
        batch.clear();
        continue;
      }
      buf.clear();
      for (const std::string& l : batch) {
        buf += l;
        buf += '\n';
      }
      batch.clear();
      if (!net::send_all(fd_.get(), buf)) {
        broken = true;
        shutdown();
      }
    }
    // Everything queued is flushed: let the peer see end-of-stream now rather
    // than when the connection is reaped.
    shutdown();
    writer_done_ = true;
  }

  MonitorServer& server_;
  net::UniqueFd fd_;
  std::thread reader_;
  std::thread writer_;
  std::thread worker_;
  std::atomic<bool> reader_done_{false};
  std::atomic<bool> writer_done_{false};

  std::mutex out_mu_;
  std::condition_variable out_cv_;
  std::deque<std::string> outbox_;
  bool out_closed_ = false;

  std::mutex in_mu_;
  std::condition_variable in_cv_;
  std::deque<FrameMessage> inbox_;
  bool in_closed_ = false;

  // Set once by the reader thread during hello.
  std::shared_ptr<Room> room_;
  Role role_ = Role::kStudent;
  std::string id_;
};

RoomSpec room_spec_from_json(const json& j) {
  try {
    RoomSpec s;
    s.room_id = j.at("room_id").get<std::string>();
    s.model_path = j.at("model_path").get<std::string>();
    if (auto it = j.find("policy"); it != j.end()) s.policy = policy_from_json(*it);
    s.threshold = j.value("threshold", 0.5);
    if (j.contains("tokens")) {
      s.student_token = j["tokens"].value("student", "");
      s.proctor_token = j["tokens"].value("proctor", "");
    } else {
      s.student_token = j.value("student_token", "");
      s.proctor_token = j.value("proctor_token", "");
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad room definition: ") + e.what());
  }
}

MonitorServer::MonitorServer(ServerOptions opts)
    : opts_(std::move(opts)), blobs_(opts_.data_dir / "blobs") {
  if (opts_.queue_capacity < 1) throw Error(ErrorCode::kInvalidArgument, "queue capacity must be >= 1");
  std::error_code ec;
  fs::create_directories(opts_.data_dir / "rooms", ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + (opts_.data_dir / "rooms").string());
}

MonitorServer::~MonitorServer() { stop(); }

void MonitorServer::start() {
  if (running_.exchange(true)) return;
  listen_fd_ = net::listen_tcp(opts_.host, opts_.channel_port, channel_port_);
  setup_http();
  const std::string http_host = opts_.host == "localhost" ? "127.0.0.1" : opts_.host;
  if (opts_.http_port == 0) {
    const int port = http_->bind_to_any_port(http_host);
    if (port <= 0) throw Error(ErrorCode::kIoFailure, "cannot bind HTTP listener");
    http_port_ = static_cast<std::uint16_t>(port);
  } else {
    if (!http_->bind_to_port(http_host, opts_.http_port)) {
      throw Error(ErrorCode::kIoFailure, "cannot bind HTTP port " + std::to_string(opts_.http_port));
    }
    http_port_ = opts_.http_port;
  }
  http_thread_ = std::thread([this] { http_->listen_after_bind(); });
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void MonitorServer::stop() {
  if (!running_.exchange(false)) return;
  if (listen_fd_.valid()) ::shutdown(listen_fd_.get(), SHUT_RDWR);
  if (accept_thread_.joinable()) accept_thread_.join();
  listen_fd_.reset();
  if (http_) http_->stop();
  if (http_thread_.joinable()) http_thread_.join();
  std::vector<std::shared_ptr<Connection>> conns;
  {
    std::lock_guard lock(conns_mu_);
    conns.swap(conns_);
  }
  for (auto& c : conns) c->shutdown();
  for (auto& c : conns) c->join();
}

void MonitorServer::accept_loop() {
  while (running_) {
    const int fd = ::accept4(listen_fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto conn = std::make_shared<Connection>(*this, net::UniqueFd(fd));
    std::lock_guard lock(conns_mu_);
    reap_finished_locked();
    if (!running_) {
      conn->shutdown();
      break;
    }
    conn->start();
    conns_.push_back(std::move(conn));
  }
}

void MonitorServer::reap_finished_locked() {
  auto it = std::partition(conns_.begin(), conns_.end(), [](const auto& c) { return !c->finished(); });
  for (auto j = it; j != conns_.end(); ++j) (*j)->join();
  conns_.erase(it, conns_.end());
}

std::string MonitorServer::create_room(const RoomSpec& spec) {
  if (!valid_room_id(spec.room_id)) {
    throw Error(ErrorCode::kInvalidArgument, "room id must match [A-Za-z0-9_.-]{1,64}");
  }
  if (spec.student_token.empty() || spec.proctor_token.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "room needs non-empty student and proctor tokens");
  }
  if (!(spec.threshold > 0.0 && spec.threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must be in (0, 1)");
  }
  spec.policy.validate();
  std::shared_ptr<const ClassifierModel> model;
  try {
    model = std::make_shared<const ClassifierModel>(load_model(spec.model_path));
  } catch (const Error& e) {
    throw Error(ErrorCode::kModelLoadFailure, e.what());
  }

  std::lock_guard lock(rooms_mu_);
  if (rooms_.count(spec.room_id) != 0) {
    throw Error(ErrorCode::kDuplicateRoom, "room '" + spec.room_id + "' already exists");
  }
  const fs::path log_path = opts_.data_dir / "rooms" / (spec.room_id + ".ndjson");
  const std::int64_t now = wall_clock_ms();
  if (fs::exists(log_path)) {
    // A previous run's log is kept aside rather than appended to.
    std::error_code ec;
    fs::rename(log_path,
               opts_.data_dir / "rooms" / (spec.room_id + "." + std::to_string(now) + ".ndjson"), ec);
    if (ec) throw Error(ErrorCode::kIoFailure, "cannot rotate old log " + log_path.string());
  }
  RoomConfig cfg{spec.room_id, std::move(model), spec.policy, spec.threshold, spec.student_token,
                 spec.proctor_token};
  rooms_.emplace(spec.room_id, std::make_shared<Room>(std::move(cfg), log_path, &blobs_,
                                                      opts_.fsync_log, now));
  return spec.room_id;
}

std::shared_ptr<Room> MonitorServer::room(const std::string& room_id) const {
  std::lock_guard lock(rooms_mu_);
  auto it = rooms_.find(room_id);
  if (it == rooms_.end()) throw Error(ErrorCode::kUnknownRoom, "no room '" + room_id + "'");
  return it->second;
}

std::vector<std::string> MonitorServer::room_ids() const {
  std::lock_guard lock(rooms_mu_);
  std::vector<std::string> ids;
  for (const auto& [id, r] : rooms_) ids.push_back(id);
  return ids;
}

RosterSnapshot MonitorServer::snapshot(const std::string& room_id) const {
  return room(room_id)->snapshot();
}

void MonitorServer::setup_http() {
  http_ = std::make_unique<httplib::Server>();
  auto& svr = *http_;

  auto reply_error = [](httplib::Response& res, ErrorCode code, const std::string& msg) {
    res.status = http_status_for(code);
    res.set_content(json{{"error", error_code_name(code)}, {"message", msg}}.dump(),
                    "application/json");
  };
  // Resolves the room and checks its proctor token.
  auto authorized_room = [this](const httplib::Request& req) {
    std::shared_ptr<Room> r = room(req.matches[1]);
    std::string token = req.get_param_value("token");
    const std::string auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
    if (!r->authorize(Role::kProctor, token)) throw Error(ErrorCode::kAuthFailure, "proctor token required");
    return r;
  };
  auto guarded = [reply_error](auto fn) {
    return [fn, reply_error](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        reply_error(res, e.code(), e.what());
      } catch (const std::exception& e) {
        reply_error(res, ErrorCode::kInternal, e.what());
      }
    };
  };

  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Authorization, Content-Type"}});
  svr.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.Post("/rooms", guarded([this](const httplib::Request& req, httplib::Response& res) {
             json body = json::parse(req.body, nullptr, false);
             if (body.is_discarded()) throw Error(ErrorCode::kInvalidArgument, "body is not JSON");
             const std::string id = create_room(room_spec_from_json(body));
             res.status = 201;
             res.set_content(json{{"room_id", id}}.dump(), "application/json");
           }));
  svr.Get("/rooms", guarded([this](const httplib::Request&, httplib::Response& res) {
            res.set_content(json{{"rooms", room_ids()}}.dump(), "application/json");
          }));
  svr.Get(R"(/rooms/([^/]+)/snapshot)",
          guarded([authorized_room](const httplib::Request& req, httplib::Response& res) {
            res.set_content(roster_to_json(authorized_room(req)->snapshot()).dump(),
                            "application/json");
          }));
  svr.Get(R"(/rooms/([^/]+)/log)",
          guarded([authorized_room](const httplib::Request& req, httplib::Response& res) {
            auto r = authorized_room(req);
            std::ifstream in(r->log_path(), std::ios::binary);
            if (!in) throw Error(ErrorCode::kIoFailure, "cannot read room log");
            res.set_content(std::string((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>()),
                            "application/x-ndjson");
          }));
  svr.Get(R"(/rooms/([^/]+)/replay)",
          guarded([authorized_room](const httplib::Request& req, httplib::Response& res) {
            auto r = authorized_room(req);
            std::optional<std::uint64_t> horizon;
            if (req.has_param("horizon")) {
              const std::string v = req.get_param_value("horizon");
              std::uint64_t h = 0;
              const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), h);
              if (ec != std::errc() || end != v.data() + v.size() || v.empty()) {
                throw Error(ErrorCode::kInvalidArgument, "horizon must be a non-negative integer");
              }
              horizon = h;
            }
            RoomReplay rep = replay_room_log_file(r->log_path(), horizon);
            json out = roster_to_json(rep.snapshot);
            out["truncated_tail"] = rep.truncated_tail;
            res.set_content(out.dump(), "application/json");
          }));
  svr.Get(R"(/rooms/([^/]+)/blobs/([0-9a-f]{64}))",
          guarded([this, authorized_room](const httplib::Request& req, httplib::Response& res) {
            authorized_room(req);
            auto bytes = blobs_.get(req.matches[2].str());
            if (!bytes) {
              res.status = 404;
              res.set_content(json{{"error", "NotFound"}, {"message", "no such blob"}}.dump(),
                              "application/json");
              return;
            }
            res.set_content(std::move(*bytes), "application/octet-stream");
          }));
}

}  // namespace exammon
