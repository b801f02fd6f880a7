#include "service/room.hpp"

#include "core/errors.hpp"
#include "core/frame_record.hpp"

namespace exammon {

using nlohmann::json;

FrameMessage frame_message_from_json(const json& j) {
  FrameMessage m;
  try {
    if (!j.at("seq").is_number_integer() || j["seq"].get<std::int64_t>() < 0) {
      throw Error(ErrorCode::kMalformedRecord, "seq must be a non-negative integer");
    }
    m.seq = j["seq"].get<std::uint64_t>();
    m.ts_ms = j.at("ts_ms").get<std::int64_t>();
    const bool has_landmarks = j.contains("landmarks");
    const bool has_features = j.contains("features");
    if (has_landmarks == has_features) {
      throw Error(ErrorCode::kMalformedRecord, "frame needs exactly one of landmarks|features");
    }
    if (has_landmarks) {
      m.width = j.at("width").get<int>();
      m.height = j.at("height").get<int>();
      m.landmarks = parse_landmarks(j["landmarks"]);
    } else {
      m.width = j.value("width", 0);
      m.height = j.value("height", 0);
      m.features = j["features"].get<std::vector<double>>();
    }
    if (auto it = j.find("image_b64"); it != j.end() && !it->is_null()) {
      m.image_b64 = it->get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("bad frame message: ") + e.what());
  }
  return m;
}

Room::Room(RoomConfig cfg, const std::filesystem::path& log_path, BlobStore* blobs, bool fsync_log,
           std::int64_t created_ms)
    : cfg_(std::move(cfg)), blobs_(blobs), log_(log_path, fsync_log) {
  cfg_.policy.validate();
  if (!cfg_.model) throw Error(ErrorCode::kModelLoadFailure, "room has no model");
  log_.append(room_header_line(0, cfg_.room_id, cfg_.policy, cfg_.threshold, created_ms));
  next_room_seq_ = 1;
}

bool Room::authorize(Role role, const std::string& token) const {
  const std::string& expected = role == Role::kStudent ? cfg_.student_token : cfg_.proctor_token;
  return !expected.empty() && token == expected;
}

Room::Student& Room::student_locked(const std::string& student_id) {
  auto it = students_.find(student_id);
  if (it == students_.end()) {
    throw Error(ErrorCode::kUnknownStudent, "no student '" + student_id + "' in room " + cfg_.room_id);
  }
  return it->second;
}

json Room::join_student(const std::string& student_id, std::shared_ptr<MessageSink> sink,
                        std::int64_t ts_ms) {
  if (student_id.empty()) throw Error(ErrorCode::kInvalidArgument, "student id is empty");
  std::lock_guard lock(mu_);
  auto it = students_.find(student_id);
  if (it == students_.end()) {
    log_.append(room_join_line(next_room_seq_, student_id, ts_ms));
    ++next_room_seq_;
    Student st{new_session(student_id, cfg_.policy), {}, 0, std::nullopt, nullptr};
    st.session.retain_log = false;
    st.roster.student_id = student_id;
    it = students_.emplace(student_id, std::move(st)).first;
    broadcast_locked({{"type", "state_change"},
                      {"student_id", student_id},
                      {"state", session_state_name(SessionState::kMonitoring)},
                      {"violation_count", 0}});
  }
  Student& st = it->second;
  st.sink = std::move(sink);
  return {{"type", "welcome"},
          {"role", "student"},
          {"room_id", cfg_.room_id},
          {"student_id", student_id},
          {"state", session_state_name(st.session.state)},
          {"violation_count", st.session.violation_count},
          {"last_seq", st.last_seq}};
}

void Room::detach_student(const std::string& student_id, const MessageSink* sink) {
  std::lock_guard lock(mu_);
  auto it = students_.find(student_id);
  if (it != students_.end() && it->second.sink.get() == sink) it->second.sink.reset();
}

json Room::subscribe_proctor(std::shared_ptr<MessageSink> sink) {
  std::lock_guard lock(mu_);
  json roster = roster_to_json(snapshot_locked());
  // Enqueued under the lock so no broadcast can overtake it.
  sink->send(roster.dump());
  proctors_.push_back(std::move(sink));
  return roster;
}

void Room::unsubscribe_proctor(const MessageSink* sink) {
  std::lock_guard lock(mu_);
  std::erase_if(proctors_, [&](const auto& p) { return p.get() == sink; });
}

void Room::broadcast_locked(const json& msg) {
  if (proctors_.empty()) return;
  const std::string line = msg.dump();
  for (const auto& p : proctors_) p->send(line);
}

void Room::commit_locked(Student& st, Transition t) {
  std::string lines;
  for (std::size_t k = 0; k < t.events.size(); ++k) {
    lines += room_event_line(next_room_seq_ + k, st.session.student_id, t.events[k]);
  }
  log_.append(lines);
  next_room_seq_ += t.events.size();
  st.session = std::move(t.session);
  for (const SessionEvent& e : t.events) st.roster.absorb(e);
  st.roster.state = st.session.state;
  st.roster.violation_count = st.session.violation_count;
}

IngestResult Room::ingest(const std::string& student_id, const FrameMessage& msg) {
  {
    std::lock_guard lock(mu_);
    Student& st = student_locked(student_id);
    if (msg.seq <= st.last_seq) {
      throw Error(ErrorCode::kStaleSeq, "seq " + std::to_string(msg.seq) + " <= last seq " +
                                            std::to_string(st.last_seq));
    }
    st.last_seq = msg.seq;
    if (st.session.state == SessionState::kEnded) {
      throw Error(ErrorCode::kSessionEnded, "session for '" + student_id + "' has ended");
    }
  }

  const ClassifierModel& model = *cfg_.model;
  Verdict verdict;
  verdict.frame_id = student_id + ":" + std::to_string(msg.seq);
  if (msg.landmarks) {
    RawFrame raw{verdict.frame_id, msg.ts_ms, msg.width, msg.height, *msg.landmarks};
    if (is_no_face_sentinel(raw)) {
      verdict.label = Label::kAbnormal;
      verdict.p_abnormal = 1.0;
      verdict.no_face = true;
    } else {
      const LandmarkFrame frame = validate_frame(std::move(raw));
      const Prediction p =
          predict(model, featurize(frame, model.feature_mode, model.selection), cfg_.threshold);
      verdict.label = p.label;
      verdict.p_abnormal = p.p_abnormal;
    }
  } else {
    const Prediction p = predict(model, FeatureVector{model.feature_mode, *msg.features},
                                 cfg_.threshold);
    verdict.label = p.label;
    verdict.p_abnormal = p.p_abnormal;
  }

  std::optional<std::string> image_ref;
  if (msg.image_b64 && blobs_ != nullptr) image_ref = blobs_->put(base64_decode(*msg.image_b64));

  std::lock_guard lock(mu_);
  Student& st = student_locked(student_id);
  if (image_ref) st.last_image_ref = image_ref;
  Transition t = observe(st.session, verdict, msg.ts_ms);
  const std::vector<SessionEvent> events = t.events;
  commit_locked(st, std::move(t));

  IngestResult out;
  out.reply = {{"type", "verdict"},
               {"seq", msg.seq},
               {"label", label_name(verdict.label)},
               {"p_abnormal", verdict.p_abnormal},
               {"state", session_state_name(st.session.state)},
               {"violation_count", st.session.violation_count}};
  if (verdict.no_face) out.reply["no_face"] = true;
  for (const SessionEvent& e : events) {
    switch (e.kind) {
      case EventKind::kWarning:
        out.reply["warning"] = true;
        break;
      case EventKind::kViolation: {
        json alert = {{"type", "alert"},
                      {"room_id", cfg_.room_id},
                      {"student_id", student_id},
                      {"ts_ms", e.ts_ms},
                      {"p_abnormal", verdict.p_abnormal},
                      {"violation_count", e.payload.violation_count.value_or(0)}};
        if (st.last_image_ref) alert["image_ref"] = *st.last_image_ref;
        if (verdict.no_face) alert["no_face"] = true;
        broadcast_locked(alert);
        break;
      }
      case EventKind::kLocked:
        broadcast_locked({{"type", "state_change"},
                          {"student_id", student_id},
                          {"state", session_state_name(SessionState::kLocked)},
                          {"violation_count", st.session.violation_count}});
        out.followups.push_back(
            {{"type", "locked"}, {"violation_count", st.session.violation_count}});
        break;
      default:
        break;
    }
  }
  return out;
}

json Room::proctor_action(const std::string& student_id, const std::string& action,
                          const std::string& actor, std::int64_t ts_ms) {
  std::lock_guard lock(mu_);
  Student& st = student_locked(student_id);
  Transition t;
  if (action == "unlock") {
    t = proctor_unlock(st.session, actor, ts_ms);
  } else if (action == "end") {
    t = proctor_end(st.session, actor, ts_ms);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown proctor action '" + action + "'");
  }
  commit_locked(st, std::move(t));
  const std::string_view state = session_state_name(st.session.state);
  broadcast_locked({{"type", "state_change"},
                    {"student_id", student_id},
                    {"state", state},
                    {"violation_count", st.session.violation_count}});
  if (st.sink) {
    json note = {{"type", action == "unlock" ? "resumed" : "ended"},
                 {"violation_count", st.session.violation_count}};
    st.sink->send(note.dump());
  }
  return {{"type", "ack"},
          {"student_id", student_id},
          {"action", action},
          {"state", state},
          {"violation_count", st.session.violation_count}};
}

void Room::record_drop(const std::string& student_id) {
  std::lock_guard lock(mu_);
  if (auto it = students_.find(student_id); it != students_.end()) {
    ++it->second.roster.dropped_frames;
  }
}

RosterSnapshot Room::snapshot_locked() const {
  RosterSnapshot s;
  s.room_id = cfg_.room_id;
  s.horizon = next_room_seq_ - 1;
  s.students.reserve(students_.size());
  for (const auto& [id, st] : students_) s.students.push_back(st.roster);
  return s;
}

RosterSnapshot Room::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_locked();
}

}  // namespace exammon
