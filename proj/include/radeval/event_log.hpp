#pragma once

// Durable event log for the workflow.
//
// Record format: a 4-byte little-endian payload length followed by the
// event as UTF-8 JSON. Appends are fsync'd before they are acknowledged. A
// torn record at the tail (crash during append) is dropped and truncated
// on open; corruption anywhere else is an error.
//
// A snapshot file next to the log holds the folded state at some sequence
// number, written atomically every `snapshot_every` events. Opening loads
// the snapshot and replays only the newer records.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/error.hpp"
#include "radeval/workflow.hpp"

namespace radeval::workflow {

namespace detail {

inline Error io_error(const std::string& what, const std::string& path) {
  return Error(ErrorCode::kIo, what + " " + path + ": " + std::strerror(errno), "path");
}

inline std::string encode_record(const std::string& body) {
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<char>((n >> (8 * i)) & 0xFF);
  return out + body;
}

}  // namespace detail

struct LogRead {
  std::vector<Event> events;
  std::uint64_t valid_bytes = 0;  // offset just past the last complete record
  bool torn_tail = false;
};

inline LogRead read_log(const std::string& path) {
  LogRead out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (pos < data.size()) {
    if (data.size() - pos < 4) {
      out.torn_tail = true;
      break;
    }
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    if (data.size() - pos - 4 < n) {
      out.torn_tail = true;
      break;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(data.substr(pos + 4, n));
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kSchema, "corrupt event record at byte " + std::to_string(pos) + " of " + path, "log");
    }
    out.events.push_back(event_from_json(j));
    pos += 4 + n;
  }
  out.valid_bytes = pos;
  return out;
}

// Folds a whole log file from an empty state.
inline WorkflowState replay(const std::string& path) {
  WorkflowState s;
  for (const auto& ev : read_log(path).events) apply(s, ev);
  return s;
}

// ---------------------------------------------------------------------------
// Snapshots

inline nlohmann::json state_to_json(const WorkflowState& s) {
  using nlohmann::json;
  json j = {{"last_seq", s.last_seq}};
  json cases = json::array(), reports = json::array(), raters = json::array(), ptasks = json::array(),
       ctasks = json::array(), assigns = json::array(), excl = json::array(), presp = json::array(),
       cresp = json::array();
  for (const auto& [id, c] : s.cases) cases.push_back(case_to_json(c));
  for (const auto& [id, r] : s.reports) reports.push_back(report_to_json(r));
  for (const auto& [id, r] : s.raters) {
    json hist = json::array();
    for (const auto& [c, k] : r.history) hist.push_back({c, to_string(k)});
    raters.push_back({{"rater_id", r.rater_id}, {"qualifications", r.qualifications}, {"history", hist}});
  }
  for (const auto& [id, t] : s.preference_tasks) {
    ptasks.push_back(to_json(Event{0, PreferenceTaskCreated{t}}));
  }
  for (const auto& [id, t] : s.correction_tasks) ctasks.push_back(to_json(t));
  for (const auto& [id, list] : s.assignments) {
    for (const auto& a : list) assigns.push_back({a.task_id, a.rater_id, a.position});
  }
  for (const auto& [r, c] : s.exclusions) excl.push_back({r, c});
  for (const auto& [key, rec] : s.preference_responses) presp.push_back({{"seq", rec.seq}, {"response", to_json(rec.response)}});
  for (const auto& [key, rec] : s.correction_responses) cresp.push_back({{"seq", rec.seq}, {"response", to_json(rec.response)}});
  j["cases"] = cases;
  j["reports"] = reports;
  j["raters"] = raters;
  j["preference_tasks"] = ptasks;
  j["correction_tasks"] = ctasks;
  j["assignments"] = assigns;
  j["exclusions"] = excl;
  j["preference_responses"] = presp;
  j["correction_responses"] = cresp;
  j["review_flags"] = s.review_flags;
  return j;
}

inline WorkflowState state_from_json(const nlohmann::json& j) {
  try {
    WorkflowState s;
    s.last_seq = j.at("last_seq").get<std::uint64_t>();
    for (const auto& c : j.at("cases")) {
      auto rec = case_from_json(c);
      s.cases.emplace(rec.case_id, rec);
    }
    for (const auto& r : j.at("reports")) {
      auto doc = report_from_json(r);
      s.reports.emplace(doc.report_id(), doc);
    }
    for (const auto& r : j.at("raters")) {
      RaterProfile p{r.at("rater_id").get<std::string>(), r.at("qualifications").get<std::string>(), {}};
      for (const auto& h : r.at("history")) p.history.emplace(h[0].get<std::string>(), parse_task_kind(h[1].get<std::string>()));
      s.raters.emplace(p.rater_id, p);
    }
    for (const auto& t : j.at("preference_tasks")) {
      auto ev = event_from_json(t);
      const auto& rec = std::get<PreferenceTaskCreated>(ev.payload).record;
      s.preference_tasks.emplace(rec.task.task_id, rec);
    }
    for (const auto& t : j.at("correction_tasks")) {
      s.correction_tasks.emplace(t.at("task_id").get<std::string>(),
                                 CorrectionTask{t.at("task_id").get<std::string>(), t.at("case_id").get<std::string>(),
                                                t.at("report_id").get<std::string>()});
    }
    for (const auto& a : j.at("assignments")) {
      s.assignments[a[0].get<std::string>()].push_back(
          {a[0].get<std::string>(), a[1].get<std::string>(), a[2].get<std::size_t>()});
    }
    for (const auto& e : j.at("exclusions")) s.exclusions.emplace(e[0].get<std::string>(), e[1].get<std::string>());
    for (const auto& r : j.at("preference_responses")) {
      auto resp = preference_response_from_json(r.at("response"));
      s.preference_responses.emplace(RaterTask{resp.task_id, resp.rater_id},
                                     Recorded<PreferenceResponse>{r.at("seq").get<std::uint64_t>(), resp});
    }
    for (const auto& r : j.at("correction_responses")) {
      auto resp = correction_response_from_json(r.at("response"));
      s.correction_responses.emplace(RaterTask{resp.task_id, resp.rater_id},
                                     Recorded<CorrectionResponse>{r.at("seq").get<std::uint64_t>(), resp});
    }
    s.review_flags = j.at("review_flags").get<std::set<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("malformed snapshot: ") + e.what(), "snapshot");
  }
}

inline std::string snapshot_path(const std::string& log_path) { return log_path + ".snapshot"; }

inline void write_snapshot(const WorkflowState& s, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw detail::io_error("cannot write snapshot", tmp);
    out << state_to_json(s).dump();
    if (!out) throw detail::io_error("cannot write snapshot", tmp);
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Workflow: the single writer

struct LogOptions {
  bool fsync = true;
  std::uint64_t snapshot_every = 1000;  // 0 disables snapshots
};

// Owns the log file and the live state. Appends are serialized by a
// writer lock; readers take a shared lock through `read`.
class Workflow {
 public:
  // In-memory only; nothing is persisted.
  Workflow() = default;

  explicit Workflow(std::string log_path, LogOptions options = {})
      : path_(std::move(log_path)), options_(options) {
    if (options_.snapshot_every > 0 && std::filesystem::exists(snapshot_path(path_))) {
      std::ifstream in(snapshot_path(path_), std::ios::binary);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kSchema, std::string("malformed snapshot: ") + e.what(), "snapshot");
      }
      state_ = state_from_json(j);
    }
    const auto log = read_log(path_);
    for (const auto& ev : log.events) {
      if (ev.seq <= state_.last_seq) continue;
      apply(state_, ev);
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw detail::io_error("cannot open event log", path_);
    if (log.torn_tail && ::ftruncate(fd_, static_cast<off_t>(log.valid_bytes)) != 0) {
      throw detail::io_error("cannot truncate torn tail of", path_);
    }
    size_ = log.valid_bytes;
  }

  Workflow(const Workflow&) = delete;
  Workflow& operator=(const Workflow&) = delete;

  ~Workflow() {
    if (fd_ >= 0) ::close(fd_);
  }

  // Validates, persists and applies one event; returns its sequence
  // number. An identical resubmitted response returns the original number
  // and appends nothing.
  std::uint64_t append(const EventPayload& payload) {
    std::unique_lock lock(mu_);
    if (auto seq = existing_seq(state_, payload)) return *seq;
    Event ev{state_.last_seq + 1, payload};
    validate_event(state_, payload);
    if (fd_ >= 0) {
      const auto rec = detail::encode_record(to_json(ev).dump());
      if (::write(fd_, rec.data(), rec.size()) != static_cast<ssize_t>(rec.size()) ||
          (options_.fsync && ::fsync(fd_) != 0)) {
        auto err = detail::io_error("cannot append to event log", path_);
        if (::ftruncate(fd_, static_cast<off_t>(size_)) != 0) err = detail::io_error("cannot roll back event log", path_);
        throw err;
      }
      size_ += rec.size();
    }
    apply(state_, ev);
    if (fd_ >= 0 && options_.snapshot_every > 0 && state_.last_seq % options_.snapshot_every == 0) {
      write_snapshot(state_, snapshot_path(path_));
    }
    return ev.seq;
  }

  // Appends a batch in order; stops at the first rejected event.
  std::vector<std::uint64_t> append_all(const std::vector<EventPayload>& payloads) {
    std::vector<std::uint64_t> out;
    for (const auto& p : payloads) out.push_back(append(p));
    return out;
  }

  std::uint64_t record_response(const PreferenceResponse& r) { return append(PreferenceSubmitted{r}); }
  std::uint64_t record_response(const CorrectionResponse& r) { return append(CorrectionSubmitted{r}); }

  template <typename F>
  auto read(F&& f) const {
    std::shared_lock lock(mu_);
    return f(state_);
  }

  WorkflowState snapshot() const {
    std::shared_lock lock(mu_);
    return state_;
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  LogOptions options_;
  int fd_ = -1;
  std::uint64_t size_ = 0;  // bytes of complete records
  WorkflowState state_;
  mutable std::shared_mutex mu_;
};

// ---------------------------------------------------------------------------
// Batch helpers used by the CLI and tests

inline std::vector<EventPayload> registration_events(const Corpus& corpus, std::span<const ReportDocument> extra) {
  std::vector<EventPayload> out;
  for (const auto& e : corpus.entries()) out.push_back(CaseRegistered{e.record});
  for (const auto& e : corpus.entries()) out.push_back(ReportRegistered{e.report});
  for (const auto& r : extra) out.push_back(ReportRegistered{r});
  return out;
}

inline std::vector<EventPayload> plan_events(const AssignmentPlan& plan) {
  std::vector<EventPayload> out;
  for (const auto& a : plan.assignments) out.push_back(AssignmentCreated{a});
  return out;
}

// Current per-rater queue lengths, so that later plans extend queues.
inline std::map<std::string, std::size_t> rater_loads(const WorkflowState& s) {
  std::map<std::string, std::size_t> load;
  for (const auto& [task, list] : s.assignments) {
    for (const auto& a : list) load[a.rater_id] = std::max(load[a.rater_id], a.position + 1);
  }
  return load;
}

}  // namespace radeval::workflow
