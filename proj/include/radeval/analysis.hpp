#pragma once

// Study aggregates over a workflow state: preference distributions,
// error rates, error types and error-set overlap, plus their exports.
//
// Fractions and means are computed as one integer-count division, so an
// input built to a decimal statistic reproduces it bit for bit. Groups are
// visited in key order and every bootstrap stream is seeded from the group
// key, which makes the output independent of event order.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/csv.hpp"
#include "radeval/error.hpp"
#include "radeval/metrics/bootstrap.hpp"
#include "radeval/random.hpp"
#include "radeval/workflow.hpp"

namespace radeval::analysis {

using nlohmann::json;
using metrics::Interval;
using workflow::WorkflowState;

inline constexpr std::string_view kAll = "ALL";

struct AnalysisOptions {
  std::size_t n_resamples = metrics::kDefaultResamples;  // 0 skips intervals
  double level = metrics::kDefaultLevel;
  std::uint64_t seed = 0;
  bool skip_incomplete = false;  // drop incomplete tasks and half-evaluated cases instead of failing
  bool operator==(const AnalysisOptions&) const = default;
};

// ---------------------------------------------------------------------------
// Unblinding

enum class Outcome { kCandidate, kOriginal, kEquivalent };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kCandidate: return "candidate";
    case Outcome::kOriginal: return "original";
    case Outcome::kEquivalent: return "equivalent";
  }
  return "?";
}

// The slot mapping, after checking it against the hash stored at
// generation time.
inline const workflow::SlotMapping& unblind(const workflow::PreferenceTaskRecord& rec) {
  const auto& m = rec.mapping;
  if (m.hash != workflow::slot_mapping_hash(rec.task, m.source_a, m.source_b)) {
    throw Error(ErrorCode::kValidation, "slot mapping of task '" + rec.task.task_id + "' fails its hash check",
                "hash");
  }
  if ((m.source_a == ReportSource::kHumanOriginal) == (m.source_b == ReportSource::kHumanOriginal)) {
    throw Error(ErrorCode::kValidation, "task '" + rec.task.task_id + "' does not pair the original with a candidate",
                "mapping");
  }
  return m;
}

inline Outcome outcome(const workflow::SlotMapping& m, workflow::Choice c) {
  if (c == workflow::Choice::kEquivalent) return Outcome::kEquivalent;
  const auto chosen = c == workflow::Choice::kA ? m.source_a : m.source_b;
  return chosen == ReportSource::kHumanOriginal ? Outcome::kOriginal : Outcome::kCandidate;
}

// ---------------------------------------------------------------------------
// Preference

struct PreferenceGroup {
  std::string phase, dataset, stratum;
  std::size_t tasks = 0;
  std::array<std::size_t, 3> responses{};  // indexed by Outcome
  std::array<double, 3> fractions{};       // responses / total responses
  std::size_t both_prefer_original = 0;
  std::size_t at_least_one_not = 0;  // at least one rater rates the candidate equivalent or better
  double at_least_one_not_fraction = 0.0;
  // Pair matrix, row = rater with the smaller id, indexed by Outcome.
  std::array<std::array<std::size_t, 3>, 3> agreement{};
  bool operator==(const PreferenceGroup&) const = default;
};

namespace detail {

inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline std::string stratum_of(const WorkflowState& s, const std::string& case_id) {
  const auto it = s.cases.find(case_id);
  if (it == s.cases.end()) throw Error(ErrorCode::kNotFound, "unknown case '" + case_id + "'", "case_id");
  return to_string(it->second.stratum);
}

inline std::string dataset_of(const WorkflowState& s, const std::string& case_id) {
  const auto it = s.cases.find(case_id);
  if (it == s.cases.end()) throw Error(ErrorCode::kNotFound, "unknown case '" + case_id + "'", "case_id");
  return to_string(it->second.dataset_tag);
}

inline void finish(PreferenceGroup& g) {
  const auto total = g.responses[0] + g.responses[1] + g.responses[2];
  for (std::size_t i = 0; i < 3; ++i) g.fractions[i] = ratio(g.responses[i], total);
  g.at_least_one_not_fraction = ratio(g.at_least_one_not, g.tasks);
}

}  // namespace detail

// One group per (phase, dataset, stratum) plus a stratum "ALL" rollup per
// (phase, dataset). Fractions are over responses; the agreement buckets
// are over tasks. Throws kInsufficient on a task without both responses
// unless skip_incomplete is set.
inline std::vector<PreferenceGroup> preference_distribution(const WorkflowState& s, const AnalysisOptions& opt = {}) {
  std::map<std::array<std::string, 3>, PreferenceGroup> groups;
  for (const auto& [id, rec] : s.preference_tasks) {
    std::vector<const workflow::Recorded<workflow::PreferenceResponse>*> rs;
    for (auto it = s.preference_responses.lower_bound({id, ""}); it != s.preference_responses.end() && it->first.first == id;
         ++it) {
      rs.push_back(&it->second);
    }
    if (rs.size() < workflow::kRatersPerTask) {
      if (opt.skip_incomplete) continue;
      throw Error(ErrorCode::kInsufficient,
                  "task '" + id + "' has " + std::to_string(rs.size()) + " of " +
                      std::to_string(workflow::kRatersPerTask) + " responses",
                  "task_id");
    }
    const auto& m = unblind(rec);
    const auto o0 = outcome(m, rs[0]->response.choice);  // rs is ordered by rater id
    const auto o1 = outcome(m, rs[1]->response.choice);
    const std::string phase = workflow::to_string(rec.task.phase);
    const std::string dataset = detail::dataset_of(s, rec.task.case_id);
    for (const std::string& stratum : {detail::stratum_of(s, rec.task.case_id), std::string(kAll)}) {
      auto& g = groups[{phase, dataset, stratum}];
      g.phase = phase;
      g.dataset = dataset;
      g.stratum = stratum;
      ++g.tasks;
      ++g.responses[static_cast<std::size_t>(o0)];
      ++g.responses[static_cast<std::size_t>(o1)];
      ++g.agreement[static_cast<std::size_t>(o0)][static_cast<std::size_t>(o1)];
      if (o0 == Outcome::kOriginal && o1 == Outcome::kOriginal) {
        ++g.both_prefer_original;
      } else {
        ++g.at_least_one_not;
      }
    }
  }
  std::vector<PreferenceGroup> out;
  for (auto& [k, g] : groups) {
    detail::finish(g);
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Errors

// One rater's assessment of one report. Responses that failed the image
// quality gate are not assessments.
struct Assessment {
  std::string case_id, report_id, rater_id;
  ReportSource source = ReportSource::kModelGenerated;
  std::size_t errors = 0;
  std::size_t significant = 0;
  std::array<std::size_t, 3> by_reason{};
};

inline std::vector<Assessment> assessments(const WorkflowState& s) {
  std::vector<Assessment> out;
  for (const auto& [key, rec] : s.correction_responses) {
    const auto& r = rec.response;
    if (!r.image_quality_ok.value_or(false)) continue;
    const auto& task = s.correction_tasks.at(r.task_id);
    Assessment a;
    a.case_id = task.case_id;
    a.report_id = task.report_id;
    a.rater_id = r.rater_id;
    a.source = workflow::report_of(s, task.report_id).source();
    a.errors = r.edits.size();
    for (const auto& e : r.edits) {
      a.significant += e.clinically_significant;
      ++a.by_reason[static_cast<std::size_t>(e.reason)];
    }
    out.push_back(std::move(a));
  }
  return out;
}

struct ErrorGroup {
  std::string dataset, stratum, source;
  std::size_t assessments = 0;
  std::size_t reports = 0;
  std::size_t total_errors = 0;
  std::size_t significant_errors = 0;
  std::size_t with_error = 0;
  std::size_t with_significant = 0;
  std::array<std::size_t, 3> reason_errors{};  // indexed by ErrorReason
  Interval mean_errors, mean_significant, fraction_with_error, fraction_with_significant;
  std::array<Interval, 3> reason_mean{};
  bool operator==(const ErrorGroup&) const = default;
};

namespace detail {

inline Interval interval(std::size_t num, std::size_t den, const std::vector<double>& values, const AnalysisOptions& opt,
                         std::uint64_t seed) {
  Interval out;
  out.point = ratio(num, den);
  if (opt.n_resamples == 0 || values.empty()) {
    out.lower = out.upper = out.point;
    return out;
  }
  const auto ci = metrics::bootstrap_ci(values, metrics::Aggregator::kMean, opt.n_resamples, opt.level, seed);
  out.lower = ci.lower;
  out.upper = ci.upper;
  return out;
}

inline std::string group_key(const std::vector<std::string>& parts) {
  std::string k;
  for (const auto& p : parts) k += p + "|";
  return k;
}

inline ErrorGroup summarize_errors(std::string dataset, std::string stratum, std::string source,
                                   const std::vector<const Assessment*>& as, const AnalysisOptions& opt) {
  ErrorGroup g;
  g.dataset = std::move(dataset);
  g.stratum = std::move(stratum);
  g.source = std::move(source);
  g.assessments = as.size();
  std::set<std::string> reports;
  std::vector<double> errors, significant, any, any_significant;
  std::array<std::vector<double>, 3> reason;
  for (const auto* a : as) {
    reports.insert(a->report_id);
    g.total_errors += a->errors;
    g.significant_errors += a->significant;
    g.with_error += a->errors > 0;
    g.with_significant += a->significant > 0;
    errors.push_back(static_cast<double>(a->errors));
    significant.push_back(static_cast<double>(a->significant));
    any.push_back(a->errors > 0 ? 1.0 : 0.0);
    any_significant.push_back(a->significant > 0 ? 1.0 : 0.0);
    for (std::size_t k = 0; k < 3; ++k) {
      g.reason_errors[k] += a->by_reason[k];
      reason[k].push_back(static_cast<double>(a->by_reason[k]));
    }
  }
  g.reports = reports.size();
  const auto base = mix_seed(opt.seed, group_key({g.dataset, g.stratum, g.source}));
  const auto n = g.assessments;
  g.mean_errors = interval(g.total_errors, n, errors, opt, mix_seed(base, "mean_errors"));
  g.mean_significant = interval(g.significant_errors, n, significant, opt, mix_seed(base, "mean_significant"));
  g.fraction_with_error = interval(g.with_error, n, any, opt, mix_seed(base, "fraction_with_error"));
  g.fraction_with_significant =
      interval(g.with_significant, n, any_significant, opt, mix_seed(base, "fraction_with_significant"));
  for (std::size_t k = 0; k < 3; ++k) {
    g.reason_mean[k] = interval(g.reason_errors[k], n, reason[k], opt,
                                mix_seed(base, workflow::to_string(workflow::kAllReasons[k])));
  }
  return g;
}

}  // namespace detail

// One group per (dataset, stratum, source) plus a stratum "ALL" rollup.
// Means are over report assessments, zero-error assessments included.
// Groups are summarized in parallel and merged in key order.
inline std::vector<ErrorGroup> error_rate_summary(const WorkflowState& s, const AnalysisOptions& opt = {}) {
  const auto as = assessments(s);
  std::map<std::array<std::string, 3>, std::vector<const Assessment*>> groups;
  for (const auto& a : as) {
    const std::string dataset = detail::dataset_of(s, a.case_id);
    const std::string source = to_string(a.source);
    groups[{dataset, detail::stratum_of(s, a.case_id), source}].push_back(&a);
    groups[{dataset, std::string(kAll), source}].push_back(&a);
  }
  std::vector<std::future<ErrorGroup>> jobs;
  for (const auto& [k, members] : groups) {
    jobs.push_back(std::async(std::launch::async, [&, k = k] {
      return detail::summarize_errors(k[0], k[1], k[2], members, opt);
    }));
  }
  std::vector<ErrorGroup> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

struct ReasonGroup {
  std::string dataset, stratum, source;
  std::array<Interval, 3> mean{};  // indexed by ErrorReason
  bool operator==(const ReasonGroup&) const = default;
};

// Mean per-report count of each error reason, with intervals.
inline std::vector<ReasonGroup> error_type_distribution(const std::vector<ErrorGroup>& summary) {
  std::vector<ReasonGroup> out;
  for (const auto& g : summary) out.push_back({g.dataset, g.stratum, g.source, g.reason_mean});
  return out;
}

inline std::vector<ReasonGroup> error_type_distribution(const WorkflowState& s, const AnalysisOptions& opt = {}) {
  return error_type_distribution(error_rate_summary(s, opt));
}

// ---------------------------------------------------------------------------
// Overlap

struct OverlapGroup {
  std::string dataset;
  std::size_t cases = 0;
  std::size_t candidate_only = 0, original_only = 0, both = 0;
  std::size_t significant_candidate_only = 0, significant_original_only = 0, significant_both = 0;
  double non_overlap_fraction = 0.0;              // (candidate_only + original_only) / union
  double significant_non_overlap_fraction = 0.0;  // same over significant errors
  bool operator==(const OverlapGroup&) const = default;
};

// Set algebra over the cases with at least one (significant) error in the
// candidate and in the original report, per dataset plus an "ALL" rollup.
// A case's report has an error when any rater found one. Every case with
// an assessment of one source needs an assessment of the other; cases
// flagged by the quality gate are left out.
inline std::vector<OverlapGroup> overlap_analysis(const WorkflowState& s, const AnalysisOptions& opt = {}) {
  struct Flags {
    bool seen_candidate = false, seen_original = false;
    bool cand = false, orig = false, cand_sig = false, orig_sig = false;
  };
  std::map<std::string, Flags> cases;
  for (const auto& a : assessments(s)) {
    if (s.review_flags.count(a.case_id)) continue;
    auto& f = cases[a.case_id];
    if (a.source == ReportSource::kHumanOriginal) {
      f.seen_original = true;
      f.orig |= a.errors > 0;
      f.orig_sig |= a.significant > 0;
    } else if (a.source == ReportSource::kModelGenerated) {
      f.seen_candidate = true;
      f.cand |= a.errors > 0;
      f.cand_sig |= a.significant > 0;
    }
  }
  std::map<std::string, OverlapGroup> groups;
  for (const auto& [case_id, f] : cases) {
    if (!f.seen_candidate || !f.seen_original) {
      if (opt.skip_incomplete) continue;
      throw Error(ErrorCode::kInsufficient,
                  "case '" + case_id + "' has no assessment of its " +
                      (f.seen_candidate ? "original" : "candidate") + " report",
                  "case_id");
    }
    for (const std::string& dataset : {detail::dataset_of(s, case_id), std::string(kAll)}) {
      auto& g = groups[dataset];
      g.dataset = dataset;
      ++g.cases;
      g.candidate_only += f.cand && !f.orig;
      g.original_only += f.orig && !f.cand;
      g.both += f.cand && f.orig;
      g.significant_candidate_only += f.cand_sig && !f.orig_sig;
      g.significant_original_only += f.orig_sig && !f.cand_sig;
      g.significant_both += f.cand_sig && f.orig_sig;
    }
  }
  std::vector<OverlapGroup> out;
  for (auto& [k, g] : groups) {
    g.non_overlap_fraction =
        detail::ratio(g.candidate_only + g.original_only, g.candidate_only + g.original_only + g.both);
    g.significant_non_overlap_fraction =
        detail::ratio(g.significant_candidate_only + g.significant_original_only,
                      g.significant_candidate_only + g.significant_original_only + g.significant_both);
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Results and export

struct Results {
  AnalysisOptions options;
  std::vector<PreferenceGroup> preference;
  std::vector<ErrorGroup> errors;
  std::vector<OverlapGroup> overlap;
  bool operator==(const Results&) const = default;
};

inline Results analyze(const WorkflowState& s, const AnalysisOptions& opt = {}) {
  return {opt, preference_distribution(s, opt), error_rate_summary(s, opt), overlap_analysis(s, opt)};
}

namespace detail {

inline json to_json(const Interval& i) { return {{"value", i.point}, {"lower", i.lower}, {"upper", i.upper}}; }
inline Interval interval_from_json(const json& j) {
  return {j.at("value").get<double>(), j.at("lower").get<double>(), j.at("upper").get<double>()};
}

inline json outcome_object(const std::array<std::size_t, 3>& v) {
  return {{"candidate", v[0]}, {"original", v[1]}, {"equivalent", v[2]}};
}
inline json outcome_object(const std::array<double, 3>& v) {
  return {{"candidate", v[0]}, {"original", v[1]}, {"equivalent", v[2]}};
}
template <typename T>
std::array<T, 3> outcome_array(const json& j) {
  return {j.at("candidate").get<T>(), j.at("original").get<T>(), j.at("equivalent").get<T>()};
}

inline json reason_object(const std::array<Interval, 3>& v) {
  json j;
  for (std::size_t k = 0; k < 3; ++k) j[workflow::to_string(workflow::kAllReasons[k])] = to_json(v[k]);
  return j;
}

}  // namespace detail

inline json to_json(const Results& r) {
  json pref = json::array(), errs = json::array(), over = json::array();
  for (const auto& g : r.preference) {
    json matrix = json::array();
    for (const auto& row : g.agreement) matrix.push_back(row);
    pref.push_back({{"phase", g.phase},
                    {"dataset", g.dataset},
                    {"stratum", g.stratum},
                    {"tasks", g.tasks},
                    {"responses", detail::outcome_object(g.responses)},
                    {"fractions", detail::outcome_object(g.fractions)},
                    {"agreement",
                     {{"both_prefer_original", g.both_prefer_original},
                      {"at_least_one_not", g.at_least_one_not},
                      {"at_least_one_not_fraction", g.at_least_one_not_fraction},
                      {"matrix", matrix}}}});
  }
  for (const auto& g : r.errors) {
    json reasons;
    for (std::size_t k = 0; k < 3; ++k) reasons[workflow::to_string(workflow::kAllReasons[k])] = g.reason_errors[k];
    errs.push_back({{"dataset", g.dataset},
                    {"stratum", g.stratum},
                    {"source", g.source},
                    {"assessments", g.assessments},
                    {"reports", g.reports},
                    {"total_errors", g.total_errors},
                    {"significant_errors", g.significant_errors},
                    {"with_error", g.with_error},
                    {"with_significant", g.with_significant},
                    {"reason_errors", reasons},
                    {"mean_errors", detail::to_json(g.mean_errors)},
                    {"mean_significant", detail::to_json(g.mean_significant)},
                    {"fraction_with_error", detail::to_json(g.fraction_with_error)},
                    {"fraction_with_significant", detail::to_json(g.fraction_with_significant)},
                    {"reason_mean", detail::reason_object(g.reason_mean)}});
  }
  for (const auto& g : r.overlap) {
    over.push_back({{"dataset", g.dataset},
                    {"cases", g.cases},
                    {"candidate_only", g.candidate_only},
                    {"original_only", g.original_only},
                    {"both", g.both},
                    {"significant_candidate_only", g.significant_candidate_only},
                    {"significant_original_only", g.significant_original_only},
                    {"significant_both", g.significant_both},
                    {"non_overlap_fraction", g.non_overlap_fraction},
                    {"significant_non_overlap_fraction", g.significant_non_overlap_fraction}});
  }
  return {{"options",
           {{"n_resamples", r.options.n_resamples},
            {"level", r.options.level},
            {"seed", r.options.seed},
            {"skip_incomplete", r.options.skip_incomplete}}},
          {"preference", pref},
          {"errors", errs},
          {"overlap", over}};
}

inline Results results_from_json(const json& j) {
  try {
    Results r;
    const auto& o = j.at("options");
    r.options = {o.at("n_resamples").get<std::size_t>(), o.at("level").get<double>(), o.at("seed").get<std::uint64_t>(),
                 o.at("skip_incomplete").get<bool>()};
    for (const auto& p : j.at("preference")) {
      PreferenceGroup g;
      g.phase = p.at("phase").get<std::string>();
      g.dataset = p.at("dataset").get<std::string>();
      g.stratum = p.at("stratum").get<std::string>();
      g.tasks = p.at("tasks").get<std::size_t>();
      g.responses = detail::outcome_array<std::size_t>(p.at("responses"));
      g.fractions = detail::outcome_array<double>(p.at("fractions"));
      const auto& a = p.at("agreement");
      g.both_prefer_original = a.at("both_prefer_original").get<std::size_t>();
      g.at_least_one_not = a.at("at_least_one_not").get<std::size_t>();
      g.at_least_one_not_fraction = a.at("at_least_one_not_fraction").get<double>();
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < 3; ++k) g.agreement[i][k] = a.at("matrix").at(i).at(k).get<std::size_t>();
      }
      r.preference.push_back(g);
    }
    for (const auto& e : j.at("errors")) {
      ErrorGroup g;
      g.dataset = e.at("dataset").get<std::string>();
      g.stratum = e.at("stratum").get<std::string>();
      g.source = e.at("source").get<std::string>();
      g.assessments = e.at("assessments").get<std::size_t>();
      g.reports = e.at("reports").get<std::size_t>();
      g.total_errors = e.at("total_errors").get<std::size_t>();
      g.significant_errors = e.at("significant_errors").get<std::size_t>();
      g.with_error = e.at("with_error").get<std::size_t>();
      g.with_significant = e.at("with_significant").get<std::size_t>();
      g.mean_errors = detail::interval_from_json(e.at("mean_errors"));
      g.mean_significant = detail::interval_from_json(e.at("mean_significant"));
      g.fraction_with_error = detail::interval_from_json(e.at("fraction_with_error"));
      g.fraction_with_significant = detail::interval_from_json(e.at("fraction_with_significant"));
      for (std::size_t k = 0; k < 3; ++k) {
        const char* name = workflow::to_string(workflow::kAllReasons[k]);
        g.reason_errors[k] = e.at("reason_errors").at(name).get<std::size_t>();
        g.reason_mean[k] = detail::interval_from_json(e.at("reason_mean").at(name));
      }
      r.errors.push_back(g);
    }
    for (const auto& v : j.at("overlap")) {
      OverlapGroup g;
      g.dataset = v.at("dataset").get<std::string>();
      g.cases = v.at("cases").get<std::size_t>();
      g.candidate_only = v.at("candidate_only").get<std::size_t>();
      g.original_only = v.at("original_only").get<std::size_t>();
      g.both = v.at("both").get<std::size_t>();
      g.significant_candidate_only = v.at("significant_candidate_only").get<std::size_t>();
      g.significant_original_only = v.at("significant_original_only").get<std::size_t>();
      g.significant_both = v.at("significant_both").get<std::size_t>();
      g.non_overlap_fraction = v.at("non_overlap_fraction").get<double>();
      g.significant_non_overlap_fraction = v.at("significant_non_overlap_fraction").get<double>();
      r.overlap.push_back(g);
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("malformed results: ") + e.what(), "results");
  }
}

// Plot-ready long format: one row per group and metric.
struct LongRow {
  std::string table, phase, dataset, stratum, source, metric;
  double value = 0.0, lower = 0.0, upper = 0.0;
  bool percent = false;  // rendered as a percentage with one decimal
};

inline std::vector<LongRow> long_rows(const Results& r) {
  std::vector<LongRow> out;
  for (const auto& g : r.preference) {
    for (std::size_t i = 0; i < 3; ++i) {
      out.push_back({"preference", g.phase, g.dataset, g.stratum, "", std::string(to_string(static_cast<Outcome>(i))) + "_preferred",
                     g.fractions[i], g.fractions[i], g.fractions[i], true});
    }
    out.push_back({"preference", g.phase, g.dataset, g.stratum, "", "at_least_one_not_original",
                   g.at_least_one_not_fraction, g.at_least_one_not_fraction, g.at_least_one_not_fraction, true});
  }
  for (const auto& g : r.errors) {
    auto add = [&](const std::string& metric, const Interval& i, bool pct) {
      out.push_back({"errors", "", g.dataset, g.stratum, g.source, metric, i.point, i.lower, i.upper, pct});
    };
    add("mean_errors", g.mean_errors, false);
    add("mean_significant", g.mean_significant, false);
    add("fraction_with_error", g.fraction_with_error, true);
    add("fraction_with_significant", g.fraction_with_significant, true);
    for (std::size_t k = 0; k < 3; ++k) {
      add(std::string("mean_") + workflow::to_string(workflow::kAllReasons[k]), g.reason_mean[k], false);
    }
  }
  for (const auto& g : r.overlap) {
    auto add = [&](const std::string& metric, double v, bool pct) {
      out.push_back({"overlap", "", g.dataset, "", "", metric, v, v, v, pct});
    };
    add("candidate_only", static_cast<double>(g.candidate_only), false);
    add("original_only", static_cast<double>(g.original_only), false);
    add("both", static_cast<double>(g.both), false);
    add("significant_candidate_only", static_cast<double>(g.significant_candidate_only), false);
    add("significant_original_only", static_cast<double>(g.significant_original_only), false);
    add("significant_both", static_cast<double>(g.significant_both), false);
    add("non_overlap_fraction", g.non_overlap_fraction, true);
    add("significant_non_overlap_fraction", g.significant_non_overlap_fraction, true);
  }
  return out;
}

inline std::string format_value(double v, bool percent) {
  char buf[64];
  if (percent) {
    std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", v);
  }
  return buf;
}

inline const std::vector<std::string>& long_header() {
  static const std::vector<std::string> h = {"table", "phase", "dataset", "stratum", "source", "metric",
                                             "unit",  "value", "lower",   "upper"};
  return h;
}

inline void write_long_csv(std::ostream& out, const Results& r) {
  csv::write_row(out, long_header());
  for (const auto& row : long_rows(r)) {
    csv::write_row(out, {row.table, row.phase, row.dataset, row.stratum, row.source, row.metric,
                         row.percent ? "percent" : "value", format_value(row.value, row.percent),
                         format_value(row.lower, row.percent), format_value(row.upper, row.percent)});
  }
}

// results.json plus preference.csv, errors.csv, overlap.csv and long.csv.
inline void export_results(const Results& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / name).string(), "out");
    return out;
  };
  {
    auto out = open("results.json");
    out << to_json(r).dump(2) << '\n';
  }
  {
    auto out = open("preference.csv");
    csv::write_row(out, {"phase", "dataset", "stratum", "tasks", "candidate_pct", "original_pct", "equivalent_pct",
                         "both_prefer_original", "at_least_one_not", "at_least_one_not_pct"});
    for (const auto& g : r.preference) {
      csv::write_row(out, {g.phase, g.dataset, g.stratum, std::to_string(g.tasks), format_value(g.fractions[0], true),
                           format_value(g.fractions[1], true), format_value(g.fractions[2], true),
                           std::to_string(g.both_prefer_original), std::to_string(g.at_least_one_not),
                           format_value(g.at_least_one_not_fraction, true)});
    }
  }
  {
    auto out = open("errors.csv");
    csv::write_row(out, {"dataset", "stratum", "source", "assessments", "reports", "mean_errors", "mean_errors_lower",
                         "mean_errors_upper", "mean_significant", "mean_significant_lower", "mean_significant_upper",
                         "with_error_pct", "with_significant_pct", "mean_INCORRECT_FINDING", "mean_INCORRECT_LOCATION",
                         "mean_INCORRECT_SEVERITY"});
    for (const auto& g : r.errors) {
      csv::write_row(out, {g.dataset, g.stratum, g.source, std::to_string(g.assessments), std::to_string(g.reports),
                           format_value(g.mean_errors.point, false), format_value(g.mean_errors.lower, false),
                           format_value(g.mean_errors.upper, false), format_value(g.mean_significant.point, false),
                           format_value(g.mean_significant.lower, false), format_value(g.mean_significant.upper, false),
                           format_value(g.fraction_with_error.point, true),
                           format_value(g.fraction_with_significant.point, true),
                           format_value(g.reason_mean[0].point, false), format_value(g.reason_mean[1].point, false),
                           format_value(g.reason_mean[2].point, false)});
    }
  }
  {
    auto out = open("overlap.csv");
    csv::write_row(out, {"dataset", "cases", "candidate_only", "original_only", "both", "significant_candidate_only",
                         "significant_original_only", "significant_both", "non_overlap_pct",
                         "significant_non_overlap_pct"});
    for (const auto& g : r.overlap) {
      csv::write_row(out, {g.dataset, std::to_string(g.cases), std::to_string(g.candidate_only),
                           std::to_string(g.original_only), std::to_string(g.both),
                           std::to_string(g.significant_candidate_only), std::to_string(g.significant_original_only),
                           std::to_string(g.significant_both), format_value(g.non_overlap_fraction, true),
                           format_value(g.significant_non_overlap_fraction, true)});
    }
  }
  {
    auto out = open("long.csv");
    write_long_csv(out, r);
  }
}

}  // namespace radeval::analysis
