#pragma once

// Blinded human-evaluation workflow: task generation, rater assignment,
// response validation and the event-sourced state they produce.
//
// All state is derived by folding events with `apply`. The persistent log
// (event_log.hpp) and the live service call the same function, which is
// what makes replay reproduce the live state exactly.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/corpus.hpp"
#include "radeval/error.hpp"
#include "radeval/hash.hpp"
#include "radeval/random.hpp"
#include "radeval/report.hpp"
#include "radeval/text.hpp"

namespace radeval::workflow {

using nlohmann::json;

enum class TaskKind { kPreference, kCorrection };
enum class Phase { kPreference, kCorrection, kCollaboration };
enum class Choice { kA, kB, kEquivalent };
enum class ErrorReason { kIncorrectFinding, kIncorrectLocation, kIncorrectSeverity };
enum class CollaborationPolicy { kFirstCompleted, kBothVariants };

inline constexpr std::size_t kRatersPerTask = 2;

inline const char* to_string(TaskKind k) { return k == TaskKind::kPreference ? "PREFERENCE" : "CORRECTION"; }
inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::kPreference: return "PREFERENCE";
    case Phase::kCorrection: return "CORRECTION";
    case Phase::kCollaboration: return "COLLABORATION";
  }
  return "?";
}
inline const char* to_string(Choice c) {
  switch (c) {
    case Choice::kA: return "A";
    case Choice::kB: return "B";
    case Choice::kEquivalent: return "EQUIVALENT";
  }
  return "?";
}
inline const char* to_string(ErrorReason r) {
  switch (r) {
    case ErrorReason::kIncorrectFinding: return "INCORRECT_FINDING";
    case ErrorReason::kIncorrectLocation: return "INCORRECT_LOCATION";
    case ErrorReason::kIncorrectSeverity: return "INCORRECT_SEVERITY";
  }
  return "?";
}
inline const char* to_string(CollaborationPolicy p) {
  return p == CollaborationPolicy::kFirstCompleted ? "FIRST_COMPLETED" : "BOTH_VARIANTS";
}

inline constexpr std::array<ErrorReason, 3> kAllReasons = {
    ErrorReason::kIncorrectFinding, ErrorReason::kIncorrectLocation, ErrorReason::kIncorrectSeverity};

namespace detail {
template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& values, const char* field) {
  for (E v : values) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::kValidation, "invalid " + std::string(field) + " '" + std::string(s) + "'", field);
}
}  // namespace detail

inline TaskKind parse_task_kind(std::string_view s) {
  return detail::parse_enum(s, std::array{TaskKind::kPreference, TaskKind::kCorrection}, "kind");
}
inline Phase parse_phase(std::string_view s) {
  return detail::parse_enum(s, std::array{Phase::kPreference, Phase::kCorrection, Phase::kCollaboration}, "phase");
}
inline Choice parse_choice(std::string_view s) {
  return detail::parse_enum(s, std::array{Choice::kA, Choice::kB, Choice::kEquivalent}, "choice");
}
inline ErrorReason parse_reason(std::string_view s) { return detail::parse_enum(s, kAllReasons, "reason"); }
inline CollaborationPolicy parse_collaboration_policy(std::string_view s) {
  return detail::parse_enum(s, std::array{CollaborationPolicy::kFirstCompleted, CollaborationPolicy::kBothVariants},
                            "policy");
}

// ---------------------------------------------------------------------------
// Tasks and responses

struct RaterProfile {
  std::string rater_id;
  std::string qualifications;
  std::set<std::pair<std::string, TaskKind>> history;  // (case_id, kind), append-only
  bool operator==(const RaterProfile&) const = default;
};

struct PreferenceTask {
  std::string task_id;
  std::string case_id;
  std::string slot_a;  // report ids
  std::string slot_b;
  std::uint64_t blinding_seed = 0;
  Phase phase = Phase::kPreference;
  bool operator==(const PreferenceTask&) const = default;
};

// The hidden half of a preference task: which source sits in which slot.
struct SlotMapping {
  ReportSource source_a = ReportSource::kHumanOriginal;
  ReportSource source_b = ReportSource::kModelGenerated;
  std::string hash;
  bool operator==(const SlotMapping&) const = default;
};

inline std::string slot_mapping_hash(const PreferenceTask& t, ReportSource a, ReportSource b) {
  return sha256_hex(t.task_id + "\n" + t.slot_a + "=" + to_string(a) + "\n" + t.slot_b + "=" + to_string(b));
}

struct PreferenceTaskRecord {
  PreferenceTask task;
  SlotMapping mapping;
  bool operator==(const PreferenceTaskRecord&) const = default;
};

struct CorrectionTask {
  std::string task_id;
  std::string case_id;
  std::string report_id;
  bool operator==(const CorrectionTask&) const = default;
};

// A byte range [begin, end) of the displayed report text.
struct Edit {
  std::size_t begin = 0;
  std::size_t end = 0;
  ErrorReason reason = ErrorReason::kIncorrectFinding;
  bool clinically_significant = false;
  std::string replacement;
  bool operator==(const Edit&) const = default;
};

struct PreferenceResponse {
  std::string task_id;
  std::string rater_id;
  Choice choice = Choice::kEquivalent;
  std::string justification;
  std::int64_t timestamp_ms = 0;
  bool operator==(const PreferenceResponse&) const = default;
};

struct CorrectionResponse {
  std::string task_id;
  std::string rater_id;
  std::optional<bool> image_quality_ok;
  std::vector<Edit> edits;
  std::string displayed_text_sha256;
  std::int64_t timestamp_ms = 0;
  bool operator==(const CorrectionResponse&) const = default;
};

struct Assignment {
  std::string task_id;
  std::string rater_id;
  std::size_t position = 0;  // place in the rater's queue
  bool operator==(const Assignment&) const = default;
};

struct AssignmentPlan {
  std::vector<Assignment> assignments;
};

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const Edit& e) {
  return {{"span", {e.begin, e.end}},
          {"reason", to_string(e.reason)},
          {"clinically_significant", e.clinically_significant},
          {"replacement", e.replacement}};
}

inline Edit edit_from_json(const json& j) {
  Edit e;
  const auto& span = j.at("span");
  if (!span.is_array() || span.size() != 2) throw Error(ErrorCode::kValidation, "span must be [begin, end]", "span");
  e.begin = span[0].get<std::size_t>();
  e.end = span[1].get<std::size_t>();
  e.reason = parse_reason(j.at("reason").get<std::string>());
  e.clinically_significant = j.at("clinically_significant").get<bool>();
  e.replacement = j.value("replacement", std::string());
  return e;
}

// Blinded: no source anywhere.
inline json to_json(const PreferenceTask& t) {
  return {{"task_id", t.task_id}, {"kind", "PREFERENCE"},     {"phase", to_string(t.phase)}, {"case_id", t.case_id},
          {"slot_a", t.slot_a},   {"slot_b", t.slot_b},       {"blinding_seed", t.blinding_seed}};
}

inline json to_json(const CorrectionTask& t) {
  return {{"task_id", t.task_id}, {"kind", "CORRECTION"}, {"case_id", t.case_id}, {"report_id", t.report_id}};
}

inline json to_json(const PreferenceResponse& r) {
  return {{"task_id", r.task_id},
          {"rater_id", r.rater_id},
          {"choice", to_string(r.choice)},
          {"justification", r.justification},
          {"timestamp_ms", r.timestamp_ms}};
}

inline json to_json(const CorrectionResponse& r) {
  json edits = json::array();
  for (const auto& e : r.edits) edits.push_back(to_json(e));
  json j = {{"task_id", r.task_id},
            {"rater_id", r.rater_id},
            {"edits", edits},
            {"displayed_text_sha256", r.displayed_text_sha256},
            {"timestamp_ms", r.timestamp_ms}};
  j["image_quality_ok"] = r.image_quality_ok ? json(*r.image_quality_ok) : json(nullptr);
  return j;
}

// Wraps nlohmann type errors as validation errors naming the field.
template <typename F>
auto parse_payload(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("malformed payload: ") + e.what());
  }
}

inline PreferenceResponse preference_response_from_json(const json& j) {
  return parse_payload([&] {
    PreferenceResponse r;
    r.task_id = j.at("task_id").get<std::string>();
    r.rater_id = j.value("rater_id", std::string());
    r.choice = parse_choice(j.at("choice").get<std::string>());
    r.justification = j.value("justification", std::string());
    r.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
    return r;
  });
}

inline CorrectionResponse correction_response_from_json(const json& j) {
  return parse_payload([&] {
    CorrectionResponse r;
    r.task_id = j.at("task_id").get<std::string>();
    r.rater_id = j.value("rater_id", std::string());
    if (j.contains("image_quality_ok") && !j.at("image_quality_ok").is_null()) {
      r.image_quality_ok = j.at("image_quality_ok").get<bool>();
    }
    for (const auto& e : j.value("edits", json::array())) r.edits.push_back(edit_from_json(e));
    r.displayed_text_sha256 = j.value("displayed_text_sha256", std::string());
    r.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
    return r;
  });
}

// ---------------------------------------------------------------------------
// Edits

namespace detail {

struct Range {
  std::size_t begin, end;
};

// Byte ranges of the findings and impression bodies inside display_text().
inline std::vector<Range> section_bodies(const ReportDocument& r) {
  std::vector<Range> out;
  std::size_t pos = 0;
  if (!r.findings().empty()) {
    pos = kFindingsMarker.size() + 1;
    out.push_back({pos, pos + r.findings().size()});
    pos += r.findings().size() + 2;
  }
  pos += kImpressionMarker.size() + 1;
  out.push_back({pos, pos + r.impression().size()});
  return out;
}

}  // namespace detail

// Throws kValidation naming the offending edit. Spans must be non-empty,
// inside one section body of the displayed text, and pairwise disjoint.
inline void validate_edits(const ReportDocument& report, std::span<const Edit> edits) {
  const auto bodies = detail::section_bodies(report);
  std::vector<std::size_t> order(edits.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& e = edits[i];
    const std::string field = "edits[" + std::to_string(i) + "].span";
    if (e.begin >= e.end) throw Error(ErrorCode::kValidation, "edit span is empty or reversed", field);
    const bool inside = std::any_of(bodies.begin(), bodies.end(),
                                    [&](const detail::Range& b) { return e.begin >= b.begin && e.end <= b.end; });
    if (!inside) throw Error(ErrorCode::kValidation, "edit span is out of bounds of the report sections", field);
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return edits[a].begin < edits[b].begin; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (edits[order[k]].begin < edits[order[k - 1]].end) {
      throw Error(ErrorCode::kValidation, "edit spans overlap", "edits[" + std::to_string(order[k]) + "].span");
    }
  }
}

// Splices replacements into the displayed text, last span first, and
// returns the edited report with source CLINICIAN_AI_EDITED. Bytes outside
// the spans are untouched; no whitespace normalization is applied.
inline ReportDocument apply_edits(const ReportDocument& report, std::span<const Edit> edits,
                                  std::string report_id = {}) {
  validate_edits(report, edits);
  std::vector<Edit> sorted(edits.begin(), edits.end());
  std::sort(sorted.begin(), sorted.end(), [](const Edit& a, const Edit& b) { return a.begin > b.begin; });
  const auto bodies = detail::section_bodies(report);
  std::vector<std::string> texts;
  if (!report.findings().empty()) texts.push_back(report.findings());
  texts.push_back(report.impression());
  for (const auto& e : sorted) {
    for (std::size_t s = 0; s < bodies.size(); ++s) {
      if (e.begin >= bodies[s].begin && e.end <= bodies[s].end) {
        texts[s].replace(e.begin - bodies[s].begin, e.end - e.begin, e.replacement);
      }
    }
  }
  Sections out;
  if (texts.size() == 2) out.findings = texts[0];
  out.impression = texts.back();
  ReportDocument edited(report_id.empty() ? report.report_id() : std::move(report_id), report.case_id(),
                        std::move(out), ReportSource::kClinicianAiEdited);
  return edited;
}

// ---------------------------------------------------------------------------
// Events and state

struct CaseRegistered {
  CaseRecord record;
};
struct ReportRegistered {
  ReportDocument report;
};
struct RaterRegistered {
  std::string rater_id;
  std::string qualifications;
};
struct PreferenceTaskCreated {
  PreferenceTaskRecord record;
};
struct CorrectionTaskCreated {
  CorrectionTask task;
};
struct AssignmentCreated {
  Assignment assignment;
};
struct ExclusionAdded {
  std::string rater_id;
  std::string case_id;
};
struct PreferenceSubmitted {
  PreferenceResponse response;
};
struct CorrectionSubmitted {
  CorrectionResponse response;
};

using EventPayload = std::variant<CaseRegistered, ReportRegistered, RaterRegistered, PreferenceTaskCreated,
                                  CorrectionTaskCreated, AssignmentCreated, ExclusionAdded, PreferenceSubmitted,
                                  CorrectionSubmitted>;

struct Event {
  std::uint64_t seq = 0;
  EventPayload payload;
};

template <typename R>
struct Recorded {
  std::uint64_t seq = 0;
  R response;
  bool operator==(const Recorded&) const = default;
};

using RaterTask = std::pair<std::string, std::string>;  // (task_id, rater_id)

struct WorkflowState {
  std::uint64_t last_seq = 0;
  std::map<std::string, CaseRecord> cases;
  std::map<std::string, ReportDocument> reports;
  std::map<std::string, RaterProfile> raters;
  std::map<std::string, PreferenceTaskRecord> preference_tasks;
  std::map<std::string, CorrectionTask> correction_tasks;
  std::map<std::string, std::vector<Assignment>> assignments;  // task_id -> in assignment order
  std::set<std::pair<std::string, std::string>> exclusions;    // (rater_id, case_id)
  std::map<RaterTask, Recorded<PreferenceResponse>> preference_responses;
  std::map<RaterTask, Recorded<CorrectionResponse>> correction_responses;
  std::set<std::string> review_flags;  // cases whose image failed the quality gate

  bool operator==(const WorkflowState&) const = default;

  bool has_task(const std::string& id) const { return preference_tasks.count(id) || correction_tasks.count(id); }

  const std::string& task_case(const std::string& id) const {
    if (auto it = preference_tasks.find(id); it != preference_tasks.end()) return it->second.task.case_id;
    if (auto it = correction_tasks.find(id); it != correction_tasks.end()) return it->second.case_id;
    throw Error(ErrorCode::kUnknownTask, "unknown task '" + id + "'", "task_id");
  }

  bool is_assigned(const std::string& task_id, const std::string& rater_id) const {
    const auto it = assignments.find(task_id);
    if (it == assignments.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(),
                       [&](const Assignment& a) { return a.rater_id == rater_id; });
  }

  bool has_response(const std::string& task_id, const std::string& rater_id) const {
    const RaterTask key{task_id, rater_id};
    return preference_responses.count(key) || correction_responses.count(key);
  }

  std::size_t response_count(const std::string& task_id) const {
    std::size_t n = 0;
    for (auto it = preference_responses.lower_bound({task_id, ""});
         it != preference_responses.end() && it->first.first == task_id; ++it) {
      ++n;
    }
    for (auto it = correction_responses.lower_bound({task_id, ""});
         it != correction_responses.end() && it->first.first == task_id; ++it) {
      ++n;
    }
    return n;
  }

  bool is_complete(const std::string& task_id) const { return response_count(task_id) >= kRatersPerTask; }

  // Tasks this rater may work on, in queue order.
  std::vector<std::string> queue(const std::string& rater_id) const {
    std::vector<std::pair<std::size_t, std::string>> q;
    for (const auto& [task, list] : assignments) {
      for (const auto& a : list) {
        if (a.rater_id == rater_id) q.emplace_back(a.position, task);
      }
    }
    std::sort(q.begin(), q.end());
    std::vector<std::string> out;
    for (auto& [pos, task] : q) out.push_back(std::move(task));
    return out;
  }

  std::optional<std::string> next_task(const std::string& rater_id) const {
    for (auto& task : queue(rater_id)) {
      if (!has_response(task, rater_id)) return task;
    }
    return std::nullopt;
  }

  bool rater_sees_case(const std::string& rater_id, const std::string& case_id) const {
    for (const auto& [task, list] : assignments) {
      if (task_case(task) != case_id) continue;
      for (const auto& a : list) {
        if (a.rater_id == rater_id) return true;
      }
    }
    return false;
  }
};

// The report a correction task shows, or the two a preference task shows.
inline const ReportDocument& report_of(const WorkflowState& s, const std::string& report_id) {
  const auto it = s.reports.find(report_id);
  if (it == s.reports.end()) throw Error(ErrorCode::kNotFound, "unknown report '" + report_id + "'", "report_id");
  return it->second;
}

// Payload equality for idempotent resubmission ignores the timestamp.
inline bool same_payload(PreferenceResponse a, PreferenceResponse b) {
  a.timestamp_ms = b.timestamp_ms = 0;
  return a == b;
}
inline bool same_payload(CorrectionResponse a, CorrectionResponse b) {
  a.timestamp_ms = b.timestamp_ms = 0;
  return a == b;
}

namespace detail {

inline void check_response_target(const WorkflowState& s, const std::string& task_id, const std::string& rater_id) {
  if (!s.has_task(task_id)) throw Error(ErrorCode::kUnknownTask, "unknown task '" + task_id + "'", "task_id");
  if (!s.is_assigned(task_id, rater_id)) {
    throw Error(ErrorCode::kUnassignedRater, "rater '" + rater_id + "' is not assigned to task '" + task_id + "'",
                "rater_id");
  }
}

inline void validate(const WorkflowState& s, const PreferenceResponse& r) {
  check_response_target(s, r.task_id, r.rater_id);
  if (!s.preference_tasks.count(r.task_id)) {
    throw Error(ErrorCode::kValidation, "task '" + r.task_id + "' is not a preference task", "task_id");
  }
  if (text::normalize_whitespace(r.justification).empty()) {
    throw Error(ErrorCode::kValidation, "justification must not be empty", "justification");
  }
}

inline void validate(const WorkflowState& s, const CorrectionResponse& r) {
  check_response_target(s, r.task_id, r.rater_id);
  const auto it = s.correction_tasks.find(r.task_id);
  if (it == s.correction_tasks.end()) {
    throw Error(ErrorCode::kValidation, "task '" + r.task_id + "' is not a correction task", "task_id");
  }
  if (!r.image_quality_ok) {
    throw Error(ErrorCode::kValidation, "image_quality_ok must be answered", "image_quality_ok");
  }
  const auto& report = report_of(s, it->second.report_id);
  if (r.displayed_text_sha256 != sha256_hex(report.display_text())) {
    throw Error(ErrorCode::kValidation, "displayed text hash does not match the served report",
                "displayed_text_sha256");
  }
  if (!*r.image_quality_ok && !r.edits.empty()) {
    throw Error(ErrorCode::kValidation, "edits are not accepted when the image fails the quality gate", "edits");
  }
  validate_edits(report, r.edits);
}

template <typename R>
void check_not_answered(const std::map<RaterTask, Recorded<R>>& m, const R& r) {
  const auto it = m.find({r.task_id, r.rater_id});
  if (it == m.end()) return;
  if (same_payload(it->second.response, r)) return;
  throw Error(ErrorCode::kConflict, "rater '" + r.rater_id + "' already answered task '" + r.task_id + "'",
              "task_id");
}

}  // namespace detail

// Checks an event against the state without changing it. A resubmission
// of an identical response passes; callers that want idempotency look it
// up with `existing_seq` first.
inline void validate_event(const WorkflowState& s, const EventPayload& p) {
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, CaseRegistered>) {
          if (s.cases.count(e.record.case_id)) {
            throw Error(ErrorCode::kDuplicate, "case '" + e.record.case_id + "' already registered", "case_id");
          }
        } else if constexpr (std::is_same_v<T, ReportRegistered>) {
          if (s.reports.count(e.report.report_id())) {
            throw Error(ErrorCode::kDuplicate, "report '" + e.report.report_id() + "' already registered",
                        "report_id");
          }
          if (!s.cases.count(e.report.case_id())) {
            throw Error(ErrorCode::kNotFound, "unknown case '" + e.report.case_id() + "'", "case_id");
          }
        } else if constexpr (std::is_same_v<T, RaterRegistered>) {
          if (e.rater_id.empty()) throw Error(ErrorCode::kValidation, "rater_id must not be empty", "rater_id");
          if (s.raters.count(e.rater_id)) {
            throw Error(ErrorCode::kDuplicate, "rater '" + e.rater_id + "' already registered", "rater_id");
          }
        } else if constexpr (std::is_same_v<T, PreferenceTaskCreated>) {
          const auto& t = e.record.task;
          if (s.has_task(t.task_id)) throw Error(ErrorCode::kDuplicate, "task '" + t.task_id + "' exists", "task_id");
          if (!s.cases.count(t.case_id)) throw Error(ErrorCode::kNotFound, "unknown case '" + t.case_id + "'", "case_id");
          report_of(s, t.slot_a);
          report_of(s, t.slot_b);
          if (e.record.mapping.hash != slot_mapping_hash(t, e.record.mapping.source_a, e.record.mapping.source_b)) {
            throw Error(ErrorCode::kValidation, "slot mapping hash mismatch for task '" + t.task_id + "'", "hash");
          }
        } else if constexpr (std::is_same_v<T, CorrectionTaskCreated>) {
          const auto& t = e.task;
          if (s.has_task(t.task_id)) throw Error(ErrorCode::kDuplicate, "task '" + t.task_id + "' exists", "task_id");
          if (report_of(s, t.report_id).case_id() != t.case_id) {
            throw Error(ErrorCode::kValidation, "report '" + t.report_id + "' belongs to another case", "report_id");
          }
        } else if constexpr (std::is_same_v<T, AssignmentCreated>) {
          const auto& a = e.assignment;
          if (!s.has_task(a.task_id)) throw Error(ErrorCode::kUnknownTask, "unknown task '" + a.task_id + "'", "task_id");
          if (!s.raters.count(a.rater_id)) {
            throw Error(ErrorCode::kNotFound, "unknown rater '" + a.rater_id + "'", "rater_id");
          }
          if (s.is_assigned(a.task_id, a.rater_id)) {
            throw Error(ErrorCode::kDuplicate, "rater already assigned to task '" + a.task_id + "'", "rater_id");
          }
          const auto it = s.assignments.find(a.task_id);
          if (it != s.assignments.end() && it->second.size() >= kRatersPerTask) {
            throw Error(ErrorCode::kValidation, "task '" + a.task_id + "' already has its raters", "task_id");
          }
          if (s.exclusions.count({a.rater_id, s.task_case(a.task_id)})) {
            throw Error(ErrorCode::kValidation, "rater '" + a.rater_id + "' is excluded from case '" +
                                                    s.task_case(a.task_id) + "'",
                        "rater_id");
          }
        } else if constexpr (std::is_same_v<T, ExclusionAdded>) {
          // Exclusions only bind future assignments.
        } else if constexpr (std::is_same_v<T, PreferenceSubmitted>) {
          detail::validate(s, e.response);
          detail::check_not_answered(s.preference_responses, e.response);
        } else if constexpr (std::is_same_v<T, CorrectionSubmitted>) {
          detail::validate(s, e.response);
          detail::check_not_answered(s.correction_responses, e.response);
        }
      },
      p);
}

// Folds one event into the state. Validates first, so a log that replays
// cleanly can only contain events that were accepted live.
inline void apply(WorkflowState& s, const Event& ev) {
  if (ev.seq != s.last_seq + 1) {
    throw Error(ErrorCode::kSchema,
                "event sequence gap: expected " + std::to_string(s.last_seq + 1) + ", got " + std::to_string(ev.seq),
                "seq");
  }
  validate_event(s, ev.payload);
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, CaseRegistered>) {
          s.cases.emplace(e.record.case_id, e.record);
        } else if constexpr (std::is_same_v<T, ReportRegistered>) {
          s.reports.emplace(e.report.report_id(), e.report);
        } else if constexpr (std::is_same_v<T, RaterRegistered>) {
          s.raters.emplace(e.rater_id, RaterProfile{e.rater_id, e.qualifications, {}});
        } else if constexpr (std::is_same_v<T, PreferenceTaskCreated>) {
          s.preference_tasks.emplace(e.record.task.task_id, e.record);
        } else if constexpr (std::is_same_v<T, CorrectionTaskCreated>) {
          s.correction_tasks.emplace(e.task.task_id, e.task);
        } else if constexpr (std::is_same_v<T, AssignmentCreated>) {
          s.assignments[e.assignment.task_id].push_back(e.assignment);
        } else if constexpr (std::is_same_v<T, ExclusionAdded>) {
          s.exclusions.emplace(e.rater_id, e.case_id);
        } else if constexpr (std::is_same_v<T, PreferenceSubmitted>) {
          const RaterTask key{e.response.task_id, e.response.rater_id};
          if (s.preference_responses.count(key)) return;
          s.preference_responses.emplace(key, Recorded<PreferenceResponse>{ev.seq, e.response});
          s.raters.at(e.response.rater_id).history.emplace(s.task_case(e.response.task_id), TaskKind::kPreference);
        } else if constexpr (std::is_same_v<T, CorrectionSubmitted>) {
          const RaterTask key{e.response.task_id, e.response.rater_id};
          if (s.correction_responses.count(key)) return;
          s.correction_responses.emplace(key, Recorded<CorrectionResponse>{ev.seq, e.response});
          const auto& case_id = s.task_case(e.response.task_id);
          s.raters.at(e.response.rater_id).history.emplace(case_id, TaskKind::kCorrection);
          if (!*e.response.image_quality_ok) s.review_flags.insert(case_id);
        }
      },
      ev.payload);
  s.last_seq = ev.seq;
}

// Sequence number of an already-recorded identical response, if any.
inline std::optional<std::uint64_t> existing_seq(const WorkflowState& s, const EventPayload& p) {
  if (const auto* e = std::get_if<PreferenceSubmitted>(&p)) {
    const auto it = s.preference_responses.find({e->response.task_id, e->response.rater_id});
    if (it != s.preference_responses.end() && same_payload(it->second.response, e->response)) return it->second.seq;
  }
  if (const auto* e = std::get_if<CorrectionSubmitted>(&p)) {
    const auto it = s.correction_responses.find({e->response.task_id, e->response.rater_id});
    if (it != s.correction_responses.end() && same_payload(it->second.response, e->response)) return it->second.seq;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Event JSON

inline json report_to_json(const ReportDocument& r) {
  return {{"report_id", r.report_id()},
          {"case_id", r.case_id()},
          {"source", to_string(r.source())},
          {"findings", r.findings()},
          {"impression", r.impression()}};
}

inline ReportDocument report_from_json(const json& j) {
  return ReportDocument(j.at("report_id").get<std::string>(), j.at("case_id").get<std::string>(),
                        {j.at("findings").get<std::string>(), j.at("impression").get<std::string>()},
                        parse_report_source(j.at("source").get<std::string>()));
}

inline json case_to_json(const CaseRecord& c) {
  return {{"case_id", c.case_id},   {"dataset_tag", to_string(c.dataset_tag)}, {"image_ref", c.image_ref},
          {"view", to_string(c.view)}, {"stratum", to_string(c.stratum)},       {"split", to_string(c.split)}};
}

inline CaseRecord case_from_json(const json& j) {
  auto req = [&](auto parsed, const char* field) {
    if (!parsed) throw Error(ErrorCode::kSchema, std::string("invalid ") + field, field);
    return *parsed;
  };
  CaseRecord c;
  c.case_id = j.at("case_id").get<std::string>();
  c.dataset_tag = req(parse_dataset_tag(j.at("dataset_tag").get<std::string>()), "dataset_tag");
  c.image_ref = j.at("image_ref").get<std::string>();
  c.view = req(parse_view(j.at("view").get<std::string>()), "view");
  c.stratum = req(parse_stratum(j.at("stratum").get<std::string>()), "stratum");
  c.split = req(parse_split(j.at("split").get<std::string>()), "split");
  return c;
}

inline json to_json(const Event& ev) {
  json j = {{"seq", ev.seq}};
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, CaseRegistered>) {
          j["type"] = "CaseRegistered";
          j["case"] = case_to_json(e.record);
        } else if constexpr (std::is_same_v<T, ReportRegistered>) {
          j["type"] = "ReportRegistered";
          j["report"] = report_to_json(e.report);
        } else if constexpr (std::is_same_v<T, RaterRegistered>) {
          j["type"] = "RaterRegistered";
          j["rater_id"] = e.rater_id;
          j["qualifications"] = e.qualifications;
        } else if constexpr (std::is_same_v<T, PreferenceTaskCreated>) {
          j["type"] = "PreferenceTaskCreated";
          j["task"] = to_json(e.record.task);
          j["mapping"] = {{"source_a", to_string(e.record.mapping.source_a)},
                          {"source_b", to_string(e.record.mapping.source_b)},
                          {"hash", e.record.mapping.hash}};
        } else if constexpr (std::is_same_v<T, CorrectionTaskCreated>) {
          j["type"] = "CorrectionTaskCreated";
          j["task"] = to_json(e.task);
        } else if constexpr (std::is_same_v<T, AssignmentCreated>) {
          j["type"] = "AssignmentCreated";
          j["task_id"] = e.assignment.task_id;
          j["rater_id"] = e.assignment.rater_id;
          j["position"] = e.assignment.position;
        } else if constexpr (std::is_same_v<T, ExclusionAdded>) {
          j["type"] = "ExclusionAdded";
          j["rater_id"] = e.rater_id;
          j["case_id"] = e.case_id;
        } else if constexpr (std::is_same_v<T, PreferenceSubmitted>) {
          j["type"] = "PreferenceSubmitted";
          j["response"] = to_json(e.response);
        } else if constexpr (std::is_same_v<T, CorrectionSubmitted>) {
          j["type"] = "CorrectionSubmitted";
          j["response"] = to_json(e.response);
        }
      },
      ev.payload);
  return j;
}

inline Event event_from_json(const json& j) {
  try {
    Event ev;
    ev.seq = j.at("seq").get<std::uint64_t>();
    const auto type = j.at("type").get<std::string>();
    if (type == "CaseRegistered") {
      ev.payload = CaseRegistered{case_from_json(j.at("case"))};
    } else if (type == "ReportRegistered") {
      ev.payload = ReportRegistered{report_from_json(j.at("report"))};
    } else if (type == "RaterRegistered") {
      ev.payload = RaterRegistered{j.at("rater_id").get<std::string>(), j.value("qualifications", std::string())};
    } else if (type == "PreferenceTaskCreated") {
      const auto& t = j.at("task");
      const auto& m = j.at("mapping");
      PreferenceTaskRecord rec;
      rec.task = {t.at("task_id").get<std::string>(), t.at("case_id").get<std::string>(),
                  t.at("slot_a").get<std::string>(),  t.at("slot_b").get<std::string>(),
                  t.at("blinding_seed").get<std::uint64_t>(), parse_phase(t.at("phase").get<std::string>())};
      rec.mapping = {parse_report_source(m.at("source_a").get<std::string>()),
                     parse_report_source(m.at("source_b").get<std::string>()), m.at("hash").get<std::string>()};
      ev.payload = PreferenceTaskCreated{rec};
    } else if (type == "CorrectionTaskCreated") {
      const auto& t = j.at("task");
      ev.payload = CorrectionTaskCreated{{t.at("task_id").get<std::string>(), t.at("case_id").get<std::string>(),
                                          t.at("report_id").get<std::string>()}};
    } else if (type == "AssignmentCreated") {
      ev.payload = AssignmentCreated{{j.at("task_id").get<std::string>(), j.at("rater_id").get<std::string>(),
                                      j.at("position").get<std::size_t>()}};
    } else if (type == "ExclusionAdded") {
      ev.payload = ExclusionAdded{j.at("rater_id").get<std::string>(), j.at("case_id").get<std::string>()};
    } else if (type == "PreferenceSubmitted") {
      ev.payload = PreferenceSubmitted{preference_response_from_json(j.at("response"))};
    } else if (type == "CorrectionSubmitted") {
      ev.payload = CorrectionSubmitted{correction_response_from_json(j.at("response"))};
    } else {
      throw Error(ErrorCode::kSchema, "unknown event type '" + type + "'", "type");
    }
    return ev;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("malformed event: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Task generation

// One report of each source per case, keyed by case_id.
inline std::map<std::string, std::map<ReportSource, const ReportDocument*>> reports_by_case(
    std::span<const ReportDocument> reports) {
  std::map<std::string, std::map<ReportSource, const ReportDocument*>> out;
  for (const auto& r : reports) {
    if (!out[r.case_id()].emplace(r.source(), &r).second) {
      throw Error(ErrorCode::kDuplicate,
                  "case '" + r.case_id() + "' has more than one " + to_string(r.source()) + " report", "reports");
    }
  }
  return out;
}

inline const ReportDocument& require_report(
    const std::map<std::string, std::map<ReportSource, const ReportDocument*>>& by_case, const std::string& case_id,
    ReportSource source) {
  const auto c = by_case.find(case_id);
  if (c != by_case.end()) {
    const auto r = c->second.find(source);
    if (r != c->second.end()) return *r->second;
  }
  throw Error(ErrorCode::kValidation, "case '" + case_id + "' has no " + to_string(source) + " report", "reports");
}

// Pairs the original with a candidate report; a seeded coin per task picks
// which one goes into slot A.
inline PreferenceTaskRecord make_preference_task(std::string task_id, const ReportDocument& original,
                                                 const ReportDocument& candidate, std::uint64_t blinding_seed,
                                                 Phase phase) {
  Rng coin(blinding_seed);
  const bool original_first = uniform_index(coin, 2) == 0;
  PreferenceTaskRecord rec;
  rec.task.task_id = std::move(task_id);
  rec.task.case_id = original.case_id();
  rec.task.slot_a = original_first ? original.report_id() : candidate.report_id();
  rec.task.slot_b = original_first ? candidate.report_id() : original.report_id();
  rec.task.blinding_seed = blinding_seed;
  rec.task.phase = phase;
  rec.mapping.source_a = original_first ? original.source() : candidate.source();
  rec.mapping.source_b = original_first ? candidate.source() : original.source();
  rec.mapping.hash = slot_mapping_hash(rec.task, rec.mapping.source_a, rec.mapping.source_b);
  return rec;
}

inline std::vector<PreferenceTaskRecord> generate_preference_tasks(std::span<const std::string> case_ids,
                                                                   std::span<const ReportDocument> reports,
                                                                   std::uint64_t seed) {
  const auto by_case = reports_by_case(reports);
  std::vector<PreferenceTaskRecord> out;
  for (const auto& case_id : case_ids) {
    const auto& original = require_report(by_case, case_id, ReportSource::kHumanOriginal);
    const auto& candidate = require_report(by_case, case_id, ReportSource::kModelGenerated);
    out.push_back(make_preference_task("pref-" + case_id, original, candidate, mix_seed(seed, case_id),
                                       Phase::kPreference));
  }
  return out;
}

// Two tasks per case, one per report. Task ids are numbered in a seeded
// order so that they do not reveal which report is which.
inline std::vector<CorrectionTask> generate_correction_tasks(std::span<const std::string> case_ids,
                                                             std::span<const ReportDocument> reports,
                                                             std::uint64_t seed) {
  const auto by_case = reports_by_case(reports);
  std::vector<CorrectionTask> out;
  for (const auto& case_id : case_ids) {
    std::vector<const ReportDocument*> pair = {&require_report(by_case, case_id, ReportSource::kHumanOriginal),
                                               &require_report(by_case, case_id, ReportSource::kModelGenerated)};
    Rng rng(mix_seed(seed, case_id));
    shuffle(pair, rng);
    for (std::size_t k = 0; k < pair.size(); ++k) {
      out.push_back({"corr-" + case_id + "-" + std::to_string(k + 1), case_id, pair[k]->report_id()});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rater assignment

struct TaskRef {
  std::string task_id;
  std::string case_id;
};

// Greedy least-loaded assignment of `per_task` distinct raters per task.
// Tasks with the fewest eligible raters go first; ties in load go to the
// rater id order. Each rater's queue is then shuffled with a seeded
// per-rater stream.
inline AssignmentPlan assign_raters(std::span<const TaskRef> tasks, std::span<const std::string> raters,
                                    const std::set<std::pair<std::string, std::string>>& exclusions,
                                    std::uint64_t seed, std::size_t per_task = kRatersPerTask,
                                    const std::map<std::string, std::size_t>& existing_load = {}) {
  std::vector<std::string> pool(raters.begin(), raters.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

  auto eligible = [&](const TaskRef& t) {
    std::vector<std::string> out;
    for (const auto& r : pool) {
      if (!exclusions.count({r, t.case_id})) out.push_back(r);
    }
    return out;
  };
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (eligible count, index)
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto n = eligible(tasks[i]).size();
    if (n < per_task) {
      throw Error(ErrorCode::kInfeasible,
                  "task '" + tasks[i].task_id + "' has " + std::to_string(n) + " eligible raters, needs " +
                      std::to_string(per_task),
                  "raters");
    }
    order.emplace_back(n, i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::map<std::string, std::size_t> load;
  for (const auto& r : pool) {
    const auto it = existing_load.find(r);
    load[r] = it == existing_load.end() ? 0 : it->second;
  }
  std::map<std::string, std::vector<std::string>> per_rater;
  for (const auto& [n, i] : order) {
    auto cands = eligible(tasks[i]);
    std::stable_sort(cands.begin(), cands.end(),
                     [&](const std::string& a, const std::string& b) { return load[a] < load[b]; });
    for (std::size_t k = 0; k < per_task; ++k) {
      ++load[cands[k]];
      per_rater[cands[k]].push_back(tasks[i].task_id);
    }
  }

  AssignmentPlan plan;
  for (auto& [rater, queue] : per_rater) {
    Rng rng(mix_seed(seed, rater));
    std::sort(queue.begin(), queue.end());
    shuffle(queue, rng);
    const std::size_t base = existing_load.count(rater) ? existing_load.at(rater) : 0;
    for (std::size_t k = 0; k < queue.size(); ++k) plan.assignments.push_back({queue[k], rater, base + k});
  }
  std::stable_sort(plan.assignments.begin(), plan.assignments.end(),
                   [](const Assignment& a, const Assignment& b) { return a.task_id < b.task_id; });
  return plan;
}

// ---------------------------------------------------------------------------
// Collaboration round

struct CollaborationRound {
  std::vector<ReportDocument> edited_reports;
  std::vector<PreferenceTaskRecord> tasks;
  std::set<std::pair<std::string, std::string>> exclusions;  // (rater_id, case_id)
};

// For every case whose model report received at least one edit, builds the
// edited report and pairs it with the original. With kFirstCompleted the
// edits come from the earliest recorded response that has any; with
// kBothVariants every such response yields its own variant. Every rater
// who corrected the model report is excluded from the new tasks' case.
inline CollaborationRound generate_collaboration_round(const WorkflowState& s, std::uint64_t seed,
                                                       CollaborationPolicy policy = CollaborationPolicy::kFirstCompleted) {
  std::map<std::string, std::vector<const Recorded<CorrectionResponse>*>> by_task;
  for (const auto& [key, rec] : s.correction_responses) by_task[key.first].push_back(&rec);
  bool any_complete = false;
  CollaborationRound round;
  for (const auto& [task_id, task] : s.correction_tasks) {
    const auto& report = report_of(s, task.report_id);
    if (!s.is_complete(task_id)) continue;
    any_complete = true;
    if (report.source() != ReportSource::kModelGenerated) continue;
    auto responses = by_task[task_id];
    std::sort(responses.begin(), responses.end(), [](const auto* a, const auto* b) { return a->seq < b->seq; });
    std::vector<const Recorded<CorrectionResponse>*> edited;
    for (const auto* r : responses) {
      if (!r->response.edits.empty()) edited.push_back(r);
    }
    if (edited.empty()) continue;
    if (policy == CollaborationPolicy::kFirstCompleted) edited.resize(1);

    const ReportDocument* original = nullptr;
    for (const auto& [id, r] : s.reports) {
      if (r.case_id() == task.case_id && r.source() == ReportSource::kHumanOriginal) original = &r;
    }
    if (!original) {
      throw Error(ErrorCode::kValidation, "case '" + task.case_id + "' has no HUMAN_ORIGINAL report", "reports");
    }
    for (std::size_t v = 0; v < edited.size(); ++v) {
      const std::string variant_id =
          "r-" + sha256_hex(report.report_id() + "\n" + edited[v]->response.rater_id).substr(0, 16);
      auto doc = apply_edits(report, edited[v]->response.edits, variant_id);
      const std::string task_suffix = edited.size() > 1 ? "-" + std::to_string(v + 1) : "";
      round.tasks.push_back(make_preference_task("collab-" + task.case_id + task_suffix, *original, doc,
                                                 mix_seed(seed, task.case_id + task_suffix), Phase::kCollaboration));
      round.edited_reports.push_back(std::move(doc));
    }
    for (const auto* r : responses) round.exclusions.emplace(r->response.rater_id, task.case_id);
  }
  if (!any_complete) {
    throw Error(ErrorCode::kInsufficient, "no completed correction task; run the correction phase first", "phase");
  }
  return round;
}

// ---------------------------------------------------------------------------
// Served payloads and progress

// What a rater sees. Carries no source and no report ids.
inline json task_payload(const WorkflowState& s, const std::string& task_id) {
  const auto& case_id = s.task_case(task_id);
  const std::string image_uri = "/v1/cases/" + case_id + "/image";
  if (const auto it = s.preference_tasks.find(task_id); it != s.preference_tasks.end()) {
    const auto& t = it->second.task;
    return {{"task_id", task_id},
            {"kind", "PREFERENCE"},
            {"case_id", case_id},
            {"image_uri", image_uri},
            {"report_a", {{"text", report_of(s, t.slot_a).display_text()}}},
            {"report_b", {{"text", report_of(s, t.slot_b).display_text()}}},
            {"choices", {"A", "B", "EQUIVALENT"}}};
  }
  const auto& t = s.correction_tasks.at(task_id);
  const auto text = report_of(s, t.report_id).display_text();
  json reasons = json::array();
  for (auto r : kAllReasons) reasons.push_back(to_string(r));
  return {{"task_id", task_id},
          {"kind", "CORRECTION"},
          {"case_id", case_id},
          {"image_uri", image_uri},
          {"report", {{"text", text}, {"sha256", sha256_hex(text)}}},
          {"reasons", reasons}};
}

inline json progress(const WorkflowState& s) {
  auto tally = [&](const auto& tasks) {
    std::size_t complete = 0, responses = 0;
    for (const auto& [id, t] : tasks) {
      const auto n = s.response_count(id);
      responses += n;
      complete += n >= kRatersPerTask;
    }
    return json{{"tasks", tasks.size()}, {"complete", complete}, {"responses", responses}};
  };
  return {{"last_seq", s.last_seq},
          {"cases", s.cases.size()},
          {"raters", s.raters.size()},
          {"preference", tally(s.preference_tasks)},
          {"correction", tally(s.correction_tasks)},
          {"review_flags", s.review_flags}};
}

}  // namespace radeval::workflow
