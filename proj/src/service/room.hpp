#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/classifier.hpp"
#include "core/session.hpp"
#include "service/blob_store.hpp"
#include "service/room_log.hpp"

namespace exammon {

// Receives server-to-client messages (one JSON line each, no terminator).
// Called with room state locked: implementations must only enqueue.
class MessageSink {
 public:
  virtual ~MessageSink() = default;
  virtual void send(std::string line) = 0;
};

enum class Role { kStudent, kProctor };

struct FrameMessage {
  std::uint64_t seq = 0;
  std::int64_t ts_ms = 0;
  int width = 0;
  int height = 0;
  std::optional<std::vector<Point2>> landmarks;
  std::optional<std::vector<double>> features;
  std::optional<std::string> image_b64;
};

// Parses a client "frame" message. Throws Error(kMalformedRecord).
FrameMessage frame_message_from_json(const nlohmann::json& j);

struct RoomConfig {
  std::string room_id;
  std::shared_ptr<const ClassifierModel> model;
  ViolationPolicy policy;
  double threshold = 0.5;
  std::string student_token;
  std::string proctor_token;
};

struct IngestResult {
  nlohmann::json reply;
  // Extra notifications for the student, sent after the reply.
  std::vector<nlohmann::json> followups;
};

// One exam room: the sessions of its students, the proctor subscriptions and
// the room's append-only event log. All state sits behind one mutex;
// inference runs outside it.
class Room {
 public:
  Room(RoomConfig cfg, const std::filesystem::path& log_path, BlobStore* blobs, bool fsync_log,
       std::int64_t created_ms);

  const std::string& id() const { return cfg_.room_id; }
  const RoomConfig& config() const { return cfg_; }
  const std::filesystem::path& log_path() const { return log_.path(); }

  bool authorize(Role role, const std::string& token) const;

  // Creates or resumes the student's session and makes `sink` the target of
  // its notifications. Returns the welcome message.
  nlohmann::json join_student(const std::string& student_id, std::shared_ptr<MessageSink> sink,
                              std::int64_t ts_ms);
  void detach_student(const std::string& student_id, const MessageSink* sink);

  // Registers a proctor subscription, sends it the current roster first and
  // returns that roster message.
  nlohmann::json subscribe_proctor(std::shared_ptr<MessageSink> sink);
  void unsubscribe_proctor(const MessageSink* sink);

  // validate -> featurize -> predict -> observe; events are appended to the
  // log before this returns. Throws Error (kStaleSeq, kSessionEnded,
  // kUnknownStudent, geometry errors).
  IngestResult ingest(const std::string& student_id, const FrameMessage& msg);

  // action is "unlock" or "end". Returns the acknowledgment message.
  nlohmann::json proctor_action(const std::string& student_id, const std::string& action,
                                const std::string& actor, std::int64_t ts_ms);

  void record_drop(const std::string& student_id);

  RosterSnapshot snapshot() const;

 private:
  struct Student {
    ExamSession session;
    RosterEntry roster;
    std::uint64_t last_seq = 0;
    std::optional<std::string> last_image_ref;
    std::shared_ptr<MessageSink> sink;
  };

  Student& student_locked(const std::string& student_id);
  // Appends the events, then commits the new session. Caller holds mu_.
  void commit_locked(Student& st, Transition t);
  void broadcast_locked(const nlohmann::json& msg);
  RosterSnapshot snapshot_locked() const;

  RoomConfig cfg_;
  BlobStore* blobs_;

  mutable std::mutex mu_;
  RoomLogWriter log_;
  std::uint64_t next_room_seq_ = 0;
  std::map<std::string, Student> students_;
  std::vector<std::shared_ptr<MessageSink>> proctors_;
};

}  // namespace exammon
