#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "core/label.hpp"

namespace exammon {

enum class SessionState : std::uint8_t { kMonitoring = 0, kLocked = 1, kEnded = 2 };

std::string_view session_state_name(SessionState s);
SessionState parse_session_state(std::string_view name);

// W consecutive abnormal frames make one violation; violations closer than
// cooldown_ms are held back; the session locks once the count exceeds
// lock_threshold.
struct ViolationPolicy {
  std::uint32_t window_frames = 15;
  std::int64_t cooldown_ms = 5000;
  std::uint32_t lock_threshold = 3;
  bool reset_on_unlock = true;

  void validate() const;

  friend bool operator==(const ViolationPolicy&, const ViolationPolicy&) = default;
};

nlohmann::json policy_to_json(const ViolationPolicy& p);
ViolationPolicy policy_from_json(const nlohmann::json& j);

enum class EventKind : std::uint8_t {
  kFrameVerdict,
  kWarning,
  kViolation,
  kLocked,
  kUnlocked,
  kEnded,
};

std::string_view event_kind_name(EventKind k);
EventKind parse_event_kind(std::string_view name);

struct EventPayload {
  std::optional<Label> label;
  std::optional<double> p_abnormal;
  std::optional<std::string> frame_id;
  bool no_face = false;
  std::optional<std::uint32_t> violation_count;
  std::optional<std::string> actor;

  friend bool operator==(const EventPayload&, const EventPayload&) = default;
};

struct SessionEvent {
  std::uint64_t seq = 0;
  std::int64_t ts_ms = 0;
  EventKind kind = EventKind::kFrameVerdict;
  EventPayload payload;

  friend bool operator==(const SessionEvent&, const SessionEvent&) = default;
};

// {"seq", "ts_ms", "kind", "payload": {...}}
nlohmann::json event_to_json(const SessionEvent& e);
// Throws Error(kCorruptLog) on a malformed object.
SessionEvent event_from_json(const nlohmann::json& j);

struct Verdict {
  Label label = Label::kNormal;
  double p_abnormal = 0.0;
  std::string frame_id;
  bool no_face = false;
};

struct ExamSession {
  std::string student_id;
  SessionState state = SessionState::kMonitoring;
  std::uint32_t violation_count = 0;
  std::uint32_t consecutive_abnormal = 0;
  std::optional<std::int64_t> cooldown_until_ms;
  ViolationPolicy policy;
  std::uint64_t next_seq = 1;
  // Long-running hosts keep the log on disk and turn this off.
  bool retain_log = true;
  std::vector<SessionEvent> event_log;

  // Equality of everything but the retained log.
  bool same_state(const ExamSession& other) const;

  friend bool operator==(const ExamSession&, const ExamSession&) = default;
};

struct Transition {
  ExamSession session;
  std::vector<SessionEvent> events;
};

ExamSession new_session(std::string student_id, const ViolationPolicy& policy);

// Every verdict is logged as FrameVerdict. While Monitoring, an abnormal run
// reaching W with the cooldown elapsed emits Violation + Warning (+ Locked
// when the count passes the threshold). Locked sessions record verdicts
// without advancing the debounce. Throws kSessionEnded once Ended.
Transition observe(ExamSession session, const Verdict& verdict, std::int64_t ts_ms);

// Locked -> Monitoring; throws kInvalidTransition from any other state.
Transition proctor_unlock(ExamSession session, const std::string& actor, std::int64_t ts_ms);
// Monitoring/Locked -> Ended; throws kSessionEnded when already Ended.
Transition proctor_end(ExamSession session, const std::string& actor, std::int64_t ts_ms);

struct ReplayResult {
  ExamSession session;
  // Events folded; less than the input only when a truncated tail was cut.
  std::size_t consumed = 0;
  bool truncated_tail = false;
};

// Folds a session's event log back into its state. Every derived event must
// match the log exactly. Throws kCorruptLog on seq gaps or regressions,
// impossible transitions or mismatching derived events. With
// allow_truncated_tail, a final transition whose derived events are missing
// is discarded instead of rejected.
ReplayResult replay_events(std::span<const SessionEvent> events, const ViolationPolicy& policy,
                           const std::string& student_id = {}, bool allow_truncated_tail = false);

ExamSession replay(std::span<const SessionEvent> events, const ViolationPolicy& policy,
                   const std::string& student_id = {});

}  // namespace exammon
