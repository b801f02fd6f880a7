#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "service/blob_store.hpp"
#include "service/net.hpp"
#include "service/room.hpp"

namespace httplib {
class Server;
}

namespace exammon {

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t channel_port = 0;  // 0 = ephemeral
  std::uint16_t http_port = 0;     // 0 = ephemeral
  std::filesystem::path data_dir = "exammon-data";
  bool fsync_log = false;
  // Unprocessed frames buffered per student connection before the oldest is
  // dropped.
  std::size_t queue_capacity = 64;
  std::size_t max_line_bytes = 8u << 20;
};

struct RoomSpec {
  std::string room_id;
  std::filesystem::path model_path;
  ViolationPolicy policy;
  double threshold = 0.5;
  std::string student_token;
  std::string proctor_token;
};

class Connection;

// Monitoring server: a newline-delimited JSON channel for students and
// proctors plus an HTTP side for room management, snapshots, logs and
// captured images.
//
// HTTP endpoints:
//   POST /rooms                         create a room (JSON RoomSpec)
//   GET  /rooms                         list room ids
//   GET  /rooms/{id}/snapshot           live roster
//   GET  /rooms/{id}/log                raw event log (NDJSON)
//   GET  /rooms/{id}/replay[?horizon=N] roster rebuilt from the log
//   GET  /rooms/{id}/blobs/{ref}        captured image
// Room-scoped GETs need the room's proctor token as "Authorization: Bearer"
// or ?token=.
class MonitorServer {
 public:
  explicit MonitorServer(ServerOptions opts);
  ~MonitorServer();
  MonitorServer(const MonitorServer&) = delete;
  MonitorServer& operator=(const MonitorServer&) = delete;

  void start();
  // Closes listeners and every connection, then joins all threads.
  void stop();

  std::uint16_t channel_port() const { return channel_port_; }
  std::uint16_t http_port() const { return http_port_; }

  // Throws kModelLoadFailure, kDuplicateRoom, kInvalidArgument.
  std::string create_room(const RoomSpec& spec);
  // Throws kUnknownRoom.
  std::shared_ptr<Room> room(const std::string& room_id) const;
  std::vector<std::string> room_ids() const;
  RosterSnapshot snapshot(const std::string& room_id) const;

 private:
  friend class Connection;

  void accept_loop();
  void reap_finished_locked();
  void setup_http();

  ServerOptions opts_;
  BlobStore blobs_;

  mutable std::mutex rooms_mu_;
  std::map<std::string, std::shared_ptr<Room>> rooms_;

  net::UniqueFd listen_fd_;
  std::uint16_t channel_port_ = 0;
  std::uint16_t http_port_ = 0;
  std::thread accept_thread_;
  std::thread http_thread_;
  std::unique_ptr<httplib::Server> http_;
  std::atomic<bool> running_{false};

  std::mutex conns_mu_;
  std::vector<std::shared_ptr<Connection>> conns_;
};

RoomSpec room_spec_from_json(const nlohmann::json& j);

std::int64_t wall_clock_ms();

}  // namespace exammon
