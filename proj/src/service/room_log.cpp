#include "service/room_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "core/errors.hpp"

namespace exammon {

using nlohmann::json;

void RosterEntry::absorb(const SessionEvent& e) {
  if (e.kind != EventKind::kFrameVerdict) return;
  last_verdict_ts_ms = e.ts_ms;
  last_p_abnormal = e.payload.p_abnormal;
  no_face = e.payload.no_face;
}

bool RosterSnapshot::same_view(const RosterSnapshot& o) const {
  if (room_id != o.room_id || horizon != o.horizon || students.size() != o.students.size()) {
    return false;
  }
  for (std::size_t i = 0; i < students.size(); ++i) {
    RosterEntry a = students[i];
    RosterEntry b = o.students[i];
    a.dropped_frames = b.dropped_frames = 0;
    if (!(a == b)) return false;
  }
  return true;
}

json roster_to_json(const RosterSnapshot& s) {
  json rows = json::array();
  for (const RosterEntry& e : s.students) {
    rows.push_back({{"student_id", e.student_id},
                    {"state", session_state_name(e.state)},
                    {"violation_count", e.violation_count},
                    {"last_verdict_ts_ms", e.last_verdict_ts_ms ? json(*e.last_verdict_ts_ms) : json()},
                    {"last_p_abnormal", e.last_p_abnormal ? json(*e.last_p_abnormal) : json()},
                    {"no_face", e.no_face},
                    {"dropped_frames", e.dropped_frames}});
  }
  return {{"type", "roster"}, {"room_id", s.room_id}, {"horizon", s.horizon}, {"students", rows}};
}

RosterSnapshot roster_from_json(const json& j) {
  RosterSnapshot s;
  s.room_id = j.at("room_id").get<std::string>();
  s.horizon = j.at("horizon").get<std::uint64_t>();
  for (const json& r : j.at("students")) {
    RosterEntry e;
    e.student_id = r.at("student_id").get<std::string>();
    e.state = parse_session_state(r.at("state").get<std::string>());
    e.violation_count = r.at("violation_count").get<std::uint32_t>();
    if (!r.at("last_verdict_ts_ms").is_null()) e.last_verdict_ts_ms = r["last_verdict_ts_ms"].get<std::int64_t>();
    if (!r.at("last_p_abnormal").is_null()) e.last_p_abnormal = r["last_p_abnormal"].get<double>();
    e.no_face = r.value("no_face", false);
    e.dropped_frames = r.value("dropped_frames", std::uint64_t{0});
    s.students.push_back(std::move(e));
  }
  return s;
}

std::string room_header_line(std::uint64_t room_seq, const std::string& room_id,
                             const ViolationPolicy& policy, double threshold, std::int64_t ts_ms) {
  return json{{"room_seq", room_seq}, {"type", "room"},       {"room_id", room_id},
              {"policy", policy_to_json(policy)}, {"threshold", threshold}, {"ts_ms", ts_ms}}
             .dump() +
         "\n";
}

std::string room_join_line(std::uint64_t room_seq, const std::string& student_id,
                           std::int64_t ts_ms) {
  return json{{"room_seq", room_seq}, {"type", "join"}, {"student_id", student_id}, {"ts_ms", ts_ms}}
             .dump() +
         "\n";
}

std::string room_event_line(std::uint64_t room_seq, const std::string& student_id,
                            const SessionEvent& e) {
  json j = event_to_json(e);
  j["room_seq"] = room_seq;
  j["student_id"] = student_id;
  return j.dump() + "\n";
}

RoomLogWriter::RoomLogWriter(const std::filesystem::path& path, bool fsync_each_append)
    : path_(path), fsync_(fsync_each_append) {
  fd_.reset(::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
  if (!fd_.valid()) {
    throw Error(ErrorCode::kIoFailure, "cannot open log " + path.string() + ": " + std::strerror(errno));
  }
}

void RoomLogWriter::append(std::string_view lines) {
  while (!lines.empty()) {
    const ssize_t n = ::write(fd_.get(), lines.data(), lines.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoFailure, "log append failed: " + std::string(std::strerror(errno)));
    }
    lines.remove_prefix(static_cast<std::size_t>(n));
  }
  if (fsync_ && ::fdatasync(fd_.get()) != 0) {
    throw Error(ErrorCode::kIoFailure, "log fsync failed: " + std::string(std::strerror(errno)));
  }
}

namespace {

struct StudentTrack {
  std::vector<SessionEvent> events;
  std::vector<std::uint64_t> room_seqs;
};

}  // namespace

RoomReplay replay_room_log(std::string_view contents, std::optional<std::uint64_t> horizon) {
  RoomReplay out;
  std::map<std::string, StudentTrack> students;
  std::uint64_t expected = 0;
  bool have_header = false;
  std::optional<std::uint64_t> last_seq;

  auto corrupt = [](std::uint64_t line_no, const std::string& why) {
    return Error(ErrorCode::kCorruptLog, "room log line " + std::to_string(line_no) + ": " + why);
  };

  std::size_t pos = 0;
  std::uint64_t line_no = 0;
  while (pos < contents.size()) {
    const std::size_t nl = contents.find('\n', pos);
    ++line_no;
    if (nl == std::string_view::npos) {
      // Torn final write.
      ++out.discarded_records;
      out.truncated_tail = true;
      break;
    }
    const std::string_view line = contents.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;

    json j = json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw corrupt(line_no, "not a JSON object");
    std::uint64_t room_seq = 0;
    try {
      room_seq = j.at("room_seq").get<std::uint64_t>();
    } catch (const json::exception&) {
      throw corrupt(line_no, "missing room_seq");
    }
    if (room_seq != expected) {
      throw corrupt(line_no, room_seq < expected ? "room_seq regression" : "room_seq gap");
    }
    if (horizon && room_seq > *horizon) break;
    ++expected;
    last_seq = room_seq;

    const std::string type = j.value("type", "event");
    try {
      if (type == "room") {
        if (have_header || room_seq != 0) throw corrupt(line_no, "header must be the first record");
        have_header = true;
        out.room_id = j.at("room_id").get<std::string>();
        out.policy = policy_from_json(j.at("policy"));
        out.threshold = j.value("threshold", 0.5);
        continue;
      }
      if (!have_header) throw corrupt(line_no, "log does not start with a room header");
      const std::string student = j.at("student_id").get<std::string>();
      if (type == "join") {
        if (!students.emplace(student, StudentTrack{}).second) {
          throw corrupt(line_no, "duplicate join for " + student);
        }
      } else if (type == "event") {
        auto it = students.find(student);
        if (it == students.end()) throw corrupt(line_no, "event for unjoined student " + student);
        it->second.events.push_back(event_from_json(j));
        it->second.room_seqs.push_back(room_seq);
      } else {
        throw corrupt(line_no, "unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw corrupt(line_no, e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kCorruptLog) throw;
      throw corrupt(line_no, e.what());
    }
  }
  if (!have_header) {
    throw Error(ErrorCode::kCorruptLog, "room log has no header record");
  }

  std::uint64_t kept_horizon = last_seq.value_or(0);
  bool cut_transition = false;
  out.snapshot.room_id = out.room_id;
  for (auto& [id, track] : students) {
    ReplayResult r;
    try {
      r = replay_events(track.events, out.policy, id, /*allow_truncated_tail=*/true);
    } catch (const Error& e) {
      throw Error(ErrorCode::kCorruptLog, "student " + id + ": " + e.what());
    }
    if (r.truncated_tail) {
      // Only the transition being written at the moment of the crash may be
      // incomplete, and its records must be the very last ones in the log.
      const std::size_t dropped = track.events.size() - r.consumed;
      const std::uint64_t first_dropped = track.room_seqs[r.consumed];
      if (cut_transition || first_dropped + dropped - 1 != last_seq.value_or(0) ||
          track.room_seqs.back() != last_seq.value_or(0)) {
        throw Error(ErrorCode::kCorruptLog, "student " + id + ": incomplete transition mid-log");
      }
      for (std::size_t k = r.consumed; k < track.room_seqs.size(); ++k) {
        if (track.room_seqs[k] != first_dropped + (k - r.consumed)) {
          throw Error(ErrorCode::kCorruptLog, "student " + id + ": incomplete transition mid-log");
        }
      }
      cut_transition = true;
      out.truncated_tail = true;
      out.discarded_records += dropped;
      kept_horizon = first_dropped - 1;
    }
    RosterEntry entry;
    entry.student_id = id;
    entry.state = r.session.state;
    entry.violation_count = r.session.violation_count;
    for (std::size_t k = 0; k < r.consumed; ++k) entry.absorb(track.events[k]);
    out.snapshot.students.push_back(std::move(entry));
    out.sessions.push_back(std::move(r.session));
  }
  out.snapshot.horizon = kept_horizon;
  return out;
}

RoomReplay replay_room_log_file(const std::filesystem::path& path,
                                std::optional<std::uint64_t> horizon) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  const std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return replay_room_log(contents, horizon);
}

}  // namespace exammon
