#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "core/session.hpp"
#include "service/net.hpp"

namespace exammon {

// One roster row: the dashboard's per-student view.
struct RosterEntry {
  std::string student_id;
  SessionState state = SessionState::kMonitoring;
  std::uint32_t violation_count = 0;
  std::optional<std::int64_t> last_verdict_ts_ms;
  std::optional<double> last_p_abnormal;
  bool no_face = false;
  // Live-only counter, not derivable from the log.
  std::uint64_t dropped_frames = 0;

  void absorb(const SessionEvent& e);
  friend bool operator==(const RosterEntry&, const RosterEntry&) = default;
};

struct RosterSnapshot {
  std::string room_id;
  // room_seq of the last log record reflected in the view.
  std::uint64_t horizon = 0;
  std::vector<RosterEntry> students;  // sorted by student_id

  // Equality ignoring the live-only drop counters.
  bool same_view(const RosterSnapshot& other) const;
};

nlohmann::json roster_to_json(const RosterSnapshot& s);
RosterSnapshot roster_from_json(const nlohmann::json& j);

// Room log records, one JSON object per line, room_seq contiguous from 0:
//   {"room_seq":0,"type":"room","room_id":..,"policy":{..},"threshold":..,"ts_ms":..}
//   {"room_seq":k,"type":"join","student_id":..,"ts_ms":..}
//   {"room_seq":k,"student_id":..,"seq":..,"ts_ms":..,"kind":..,"payload":{..}}
std::string room_header_line(std::uint64_t room_seq, const std::string& room_id,
                             const ViolationPolicy& policy, double threshold, std::int64_t ts_ms);
std::string room_join_line(std::uint64_t room_seq, const std::string& student_id,
                           std::int64_t ts_ms);
std::string room_event_line(std::uint64_t room_seq, const std::string& student_id,
                            const SessionEvent& e);

// Append-only writer. Each append is a single write(2) on an O_APPEND file so
// a crash can only tear the final line.
class RoomLogWriter {
 public:
  RoomLogWriter(const std::filesystem::path& path, bool fsync_each_append);

  // `lines` must be newline-terminated. Throws Error(kIoFailure).
  void append(std::string_view lines);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  net::UniqueFd fd_;
  bool fsync_;
};

struct RoomReplay {
  std::string room_id;
  ViolationPolicy policy;
  double threshold = 0.5;
  RosterSnapshot snapshot;
  std::vector<ExamSession> sessions;  // sorted by student_id
  // Records discarded because the log ended inside a line or a transition.
  std::size_t discarded_records = 0;
  bool truncated_tail = false;
};

// Rebuilds room state from its log, optionally only up to room_seq
// `horizon`. A torn final line or a transition cut short at the end is
// discarded; anything else inconsistent throws Error(kCorruptLog).
RoomReplay replay_room_log(std::string_view contents,
                           std::optional<std::uint64_t> horizon = std::nullopt);
RoomReplay replay_room_log_file(const std::filesystem::path& path,
                                std::optional<std::uint64_t> horizon = std::nullopt);

}  // namespace exammon
