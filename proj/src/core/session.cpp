#include "core/session.hpp"

#include <algorithm>
#include <optional>

#include "core/errors.hpp"

namespace exammon {

using nlohmann::json;

std::string_view session_state_name(SessionState s) {
  switch (s) {
    case SessionState::kMonitoring: return "Monitoring";
    case SessionState::kLocked: return "Locked";
    case SessionState::kEnded: return "Ended";
  }
  return "Unknown";
}

SessionState parse_session_state(std::string_view name) {
  if (name == "Monitoring") return SessionState::kMonitoring;
  if (name == "Locked") return SessionState::kLocked;
  if (name == "Ended") return SessionState::kEnded;
  throw Error(ErrorCode::kInvalidArgument, "unknown session state '" + std::string(name) + "'");
}

void ViolationPolicy::validate() const {
  if (window_frames < 1) throw Error(ErrorCode::kInvalidArgument, "window_frames must be >= 1");
  if (cooldown_ms < 0) throw Error(ErrorCode::kInvalidArgument, "cooldown_ms must be >= 0");
  if (lock_threshold < 1) throw Error(ErrorCode::kInvalidArgument, "lock_threshold must be >= 1");
}

json policy_to_json(const ViolationPolicy& p) {
  return {{"window_frames", p.window_frames},
          {"cooldown_ms", p.cooldown_ms},
          {"lock_threshold", p.lock_threshold},
          {"reset_on_unlock", p.reset_on_unlock}};
}

ViolationPolicy policy_from_json(const json& j) {
  ViolationPolicy p;
  try {
    p.window_frames = j.value("window_frames", p.window_frames);
    p.cooldown_ms = j.value("cooldown_ms", p.cooldown_ms);
    p.lock_threshold = j.value("lock_threshold", p.lock_threshold);
    p.reset_on_unlock = j.value("reset_on_unlock", p.reset_on_unlock);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad policy: ") + e.what());
  }
  p.validate();
  return p;
}

std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::kFrameVerdict: return "FrameVerdict";
    case EventKind::kWarning: return "Warning";
    case EventKind::kViolation: return "Violation";
    case EventKind::kLocked: return "Locked";
    case EventKind::kUnlocked: return "Unlocked";
    case EventKind::kEnded: return "Ended";
  }
  return "Unknown";
}

EventKind parse_event_kind(std::string_view name) {
  for (EventKind k : {EventKind::kFrameVerdict, EventKind::kWarning, EventKind::kViolation,
                      EventKind::kLocked, EventKind::kUnlocked, EventKind::kEnded}) {
    if (event_kind_name(k) == name) return k;
  }
  throw Error(ErrorCode::kCorruptLog, "unknown event kind '" + std::string(name) + "'");
}

json event_to_json(const SessionEvent& e) {
  json payload = json::object();
  const EventPayload& p = e.payload;
  if (p.label) payload["label"] = label_name(*p.label);
  if (p.p_abnormal) payload["p_abnormal"] = *p.p_abnormal;
  if (p.frame_id) payload["frame_id"] = *p.frame_id;
  if (p.no_face) payload["no_face"] = true;
  if (p.violation_count) payload["violation_count"] = *p.violation_count;
  if (p.actor) payload["actor"] = *p.actor;
  return {{"seq", e.seq}, {"ts_ms", e.ts_ms}, {"kind", event_kind_name(e.kind)},
          {"payload", std::move(payload)}};
}

SessionEvent event_from_json(const json& j) {
  try {
    SessionEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.ts_ms = j.at("ts_ms").get<std::int64_t>();
    e.kind = parse_event_kind(j.at("kind").get<std::string>());
    const json& p = j.at("payload");
    if (auto it = p.find("label"); it != p.end()) e.payload.label = parse_label(it->get<std::string>());
    if (auto it = p.find("p_abnormal"); it != p.end()) e.payload.p_abnormal = it->get<double>();
    if (auto it = p.find("frame_id"); it != p.end()) e.payload.frame_id = it->get<std::string>();
    e.payload.no_face = p.value("no_face", false);
    if (auto it = p.find("violation_count"); it != p.end()) {
      e.payload.violation_count = it->get<std::uint32_t>();
    }
    if (auto it = p.find("actor"); it != p.end()) e.payload.actor = it->get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kCorruptLog, std::string("malformed event: ") + ex.what());
  } catch (const Error& ex) {
    throw Error(ErrorCode::kCorruptLog, std::string("malformed event: ") + ex.what());
  }
}

bool ExamSession::same_state(const ExamSession& o) const {
  return student_id == o.student_id && state == o.state && violation_count == o.violation_count &&
         consecutive_abnormal == o.consecutive_abnormal &&
         cooldown_until_ms == o.cooldown_until_ms && policy == o.policy && next_seq == o.next_seq;
}

ExamSession new_session(std::string student_id, const ViolationPolicy& policy) {
  policy.validate();
  ExamSession s;
  s.student_id = std::move(student_id);
  s.policy = policy;
  return s;
}

namespace {

class Emitter {
 public:
  explicit Emitter(ExamSession& s) : s_(s) {}

  void emit(std::int64_t ts_ms, EventKind kind, EventPayload payload = {}) {
    SessionEvent e{s_.next_seq++, ts_ms, kind, std::move(payload)};
    if (s_.retain_log) s_.event_log.push_back(e);
    events_.push_back(std::move(e));
  }

  std::vector<SessionEvent> take() { return std::move(events_); }

 private:
  ExamSession& s_;
  std::vector<SessionEvent> events_;
};

}  // namespace

Transition observe(ExamSession s, const Verdict& v, std::int64_t ts_ms) {
  if (s.state == SessionState::kEnded) {
    throw Error(ErrorCode::kSessionEnded, "session for '" + s.student_id + "' has ended");
  }
  Emitter out(s);
  EventPayload verdict;
  verdict.label = v.label;
  verdict.p_abnormal = v.p_abnormal;
  verdict.frame_id = v.frame_id;
  verdict.no_face = v.no_face;
  out.emit(ts_ms, EventKind::kFrameVerdict, std::move(verdict));

  if (s.state == SessionState::kMonitoring) {
    if (v.label == Label::kNormal) {
      s.consecutive_abnormal = 0;
    } else {
      // Saturates at W: a run that fills the window during cooldown fires on
      // the first abnormal frame after the cooldown expires.
      s.consecutive_abnormal = std::min(s.consecutive_abnormal + 1, s.policy.window_frames);
      const bool cooled = !s.cooldown_until_ms || ts_ms >= *s.cooldown_until_ms;
      if (s.consecutive_abnormal >= s.policy.window_frames && cooled) {
        s.violation_count += 1;
        s.consecutive_abnormal = 0;
        s.cooldown_until_ms = ts_ms + s.policy.cooldown_ms;
        EventPayload violation;
        violation.p_abnormal = v.p_abnormal;
        violation.frame_id = v.frame_id;
        violation.violation_count = s.violation_count;
        out.emit(ts_ms, EventKind::kViolation, violation);
        out.emit(ts_ms, EventKind::kWarning, violation);
        if (s.violation_count > s.policy.lock_threshold) {
          s.state = SessionState::kLocked;
          EventPayload locked;
          locked.violation_count = s.violation_count;
          out.emit(ts_ms, EventKind::kLocked, locked);
        }
      }
    }
  }
  auto events = out.take();
  return {std::move(s), std::move(events)};
}

Transition proctor_unlock(ExamSession s, const std::string& actor, std::int64_t ts_ms) {
  if (s.state != SessionState::kLocked) {
    throw Error(ErrorCode::kInvalidTransition,
                "cannot unlock '" + s.student_id + "' in state " +
                    std::string(session_state_name(s.state)));
  }
  s.state = SessionState::kMonitoring;
  if (s.policy.reset_on_unlock) s.violation_count = 0;
  s.consecutive_abnormal = 0;
  s.cooldown_until_ms.reset();
  Emitter out(s);
  EventPayload p;
  p.actor = actor;
  p.violation_count = s.violation_count;
  out.emit(ts_ms, EventKind::kUnlocked, std::move(p));
  auto events = out.take();
  return {std::move(s), std::move(events)};
}

Transition proctor_end(ExamSession s, const std::string& actor, std::int64_t ts_ms) {
  if (s.state == SessionState::kEnded) {
    throw Error(ErrorCode::kSessionEnded, "session for '" + s.student_id + "' already ended");
  }
  s.state = SessionState::kEnded;
  Emitter out(s);
  EventPayload p;
  p.actor = actor;
  p.violation_count = s.violation_count;
  out.emit(ts_ms, EventKind::kEnded, std::move(p));
  auto events = out.take();
  return {std::move(s), std::move(events)};
}

ReplayResult replay_events(std::span<const SessionEvent> events, const ViolationPolicy& policy,
                           const std::string& student_id, bool allow_truncated_tail) {
  ReplayResult r{new_session(student_id, policy), 0, false};
  auto corrupt = [&](std::size_t at, const std::string& why) {
    return Error(ErrorCode::kCorruptLog, "event " + std::to_string(at) + " (seq " +
                                             std::to_string(events[at].seq) + "): " + why);
  };

  std::size_t i = 0;
  while (i < events.size()) {
    const SessionEvent& e = events[i];
    if (e.seq != r.session.next_seq) {
      throw corrupt(i, e.seq < r.session.next_seq ? "seq regression" : "seq gap");
    }
    // A transition emits at most four events; only near the end of the log
    // can it run past the input, so only there is a copy kept for rollback.
    const bool near_end = events.size() - i < 4;
    std::optional<ExamSession> before;
    if (near_end) before = r.session;
    Transition t;
    try {
      switch (e.kind) {
        case EventKind::kFrameVerdict: {
          if (!e.payload.label || !e.payload.p_abnormal) throw corrupt(i, "verdict without label");
          Verdict v{*e.payload.label, *e.payload.p_abnormal, e.payload.frame_id.value_or(""),
                    e.payload.no_face};
          t = observe(std::move(r.session), v, e.ts_ms);
          break;
        }
        case EventKind::kUnlocked:
          t = proctor_unlock(std::move(r.session), e.payload.actor.value_or(""), e.ts_ms);
          break;
        case EventKind::kEnded:
          t = proctor_end(std::move(r.session), e.payload.actor.value_or(""), e.ts_ms);
          break;
        case EventKind::kWarning:
        case EventKind::kViolation:
        case EventKind::kLocked:
          throw corrupt(i, std::string(event_kind_name(e.kind)) + " without a triggering verdict");
      }
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kCorruptLog) throw;
      throw corrupt(i, std::string("impossible transition: ") + err.what());
    }

    if (events.size() - i < t.events.size()) {
      if (allow_truncated_tail) {
        r.session = std::move(*before);
        r.truncated_tail = true;
        return r;
      }
      throw corrupt(i, "log ends inside a transition");
    }
    for (std::size_t k = 0; k < t.events.size(); ++k) {
      if (!(t.events[k] == events[i + k])) {
        throw corrupt(i + k, "does not match the event derived from its verdict");
      }
    }
    i += t.events.size();
    r.consumed = i;
    r.session = std::move(t.session);
  }
  return r;
}

ExamSession replay(std::span<const SessionEvent> events, const ViolationPolicy& policy,
                   const std::string& student_id) {
  return replay_events(events, policy, student_id, false).session;
}

}  // namespace exammon
