#pragma once

// Corpus-level scoring of generated reports against references, as run by
// `radeval score`, and the labels.csv export behind `radeval label`.
//
// Report JSONL (pred and ref files), one object per line:
//   {"case_id": "c1", "report_id": "m-c1", "text": "..."}
//   {"case_id": "c1", "report": {"findings": "...", "impression": "..."}}
//   {"case_id": "c1", "report": {"raw": "FINDINGS: ... IMPRESSION: ..."}}
// report_id defaults to case_id. A "text" without section markers is taken
// as the impression.

#include <array>
#include <future>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/corpus.hpp"
#include "radeval/csv.hpp"
#include "radeval/error.hpp"
#include "radeval/labeler.hpp"
#include "radeval/metrics.hpp"
#include "radeval/random.hpp"
#include "radeval/report.hpp"

namespace radeval::scoring {

using nlohmann::json;

inline ReportDocument report_line_from_json(const json& j, ReportSource source) {
  if (!j.is_object()) throw Error(ErrorCode::kSchema, "record is not a JSON object");
  const auto case_id = radeval::detail::json_string(j, "case_id");
  if (!case_id || case_id->empty()) throw Error(ErrorCode::kSchema, "missing field 'case_id'", "case_id");
  const auto report_id = radeval::detail::json_string(j, "report_id");
  Sections sections;
  if (const auto t = radeval::detail::json_string(j, "text")) {
    if (auto s = extract_sections(*t)) {
      sections = std::move(*s);
    } else {
      sections.impression = text::normalize_whitespace(*t);
    }
  } else {
    const auto raw = radeval::detail::raw_from_json(j);
    if (raw.raw) {
      auto s = extract_sections(*raw.raw);
      if (!s) throw Error(ErrorCode::kValidation, "empty impression", "report");
      sections = std::move(*s);
    } else if (raw.findings || raw.impression) {
      sections.findings = text::normalize_whitespace(raw.findings.value_or(""));
      sections.impression = text::normalize_whitespace(raw.impression.value_or(""));
    } else {
      throw Error(ErrorCode::kSchema, "missing field 'text' or 'report'", "report");
    }
  }
  if (sections.findings.empty() && sections.impression.empty()) {
    throw Error(ErrorCode::kValidation, "empty report", "report");
  }
  if (const auto src = radeval::detail::json_string(j, "source")) source = parse_report_source(*src);
  return ReportDocument(report_id && !report_id->empty() ? *report_id : *case_id, *case_id, std::move(sections),
                        source);
}

// Throws with the 1-based line number on the first malformed line.
inline std::vector<ReportDocument> read_reports_jsonl(std::istream& in, ReportSource source) {
  std::vector<ReportDocument> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(report_line_from_json(json::parse(line), source));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchema, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what(), e.field());
    }
  }
  return out;
}

inline std::vector<ReportDocument> read_reports_file(const std::string& path, ReportSource source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path, "path");
  return read_reports_jsonl(in, source);
}

// case_id,report_id, then one column per category.
inline void write_labels_csv(const Corpus& corpus, std::ostream& out, const Lexicon& lexicon = default_lexicon()) {
  std::vector<std::string> header = {"case_id", "report_id"};
  for (auto name : kCategoryNames) header.emplace_back(name);
  csv::write_row(out, header);
  for (const auto& e : corpus.entries()) {
    const auto labels = label_report(e.report, lexicon);
    std::vector<std::string> row = {e.record.case_id, e.report.report_id()};
    for (auto c : kAllCategories) row.emplace_back(short_code(labels[c]));
    csv::write_row(out, row);
  }
}

// ---------------------------------------------------------------------------
// Scoring

inline const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> kNames = {"bleu4", "rouge", "cider", "f1-all", "f1-top5", "graph-f1"};
  return kNames;
}

inline std::vector<std::string> parse_metric_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string name(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    if (!name.empty()) {
      const auto& known = known_metrics();
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        throw Error(ErrorCode::kInvalidArgument, "unknown metric '" + name + "'", "metrics");
      }
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no metrics requested", "metrics");
  return out;
}

struct ScoreOptions {
  std::vector<std::string> metrics = known_metrics();
  std::size_t n_resamples = metrics::kDefaultResamples;  // 0 skips confidence intervals
  double level = metrics::kDefaultLevel;
  std::uint64_t seed = 0;
  metrics::UncertainPolicy uncertain = metrics::UncertainPolicy::kAsNegative;
};

// One aligned (candidate, reference) pair.
struct ScoredPair {
  const ReportDocument* pred = nullptr;
  const ReportDocument* ref = nullptr;
};

// Pairs by case_id in case_id order. Both sides must cover the same cases
// exactly once.
inline std::vector<ScoredPair> align(std::span<const ReportDocument> pred, std::span<const ReportDocument> ref) {
  std::map<std::string, ScoredPair> by_case;
  for (const auto& r : pred) {
    if (by_case[r.case_id()].pred) {
      throw Error(ErrorCode::kDuplicate, "case '" + r.case_id() + "' appears twice in predictions", "pred");
    }
    by_case[r.case_id()].pred = &r;
  }
  for (const auto& r : ref) {
    if (by_case[r.case_id()].ref) {
      throw Error(ErrorCode::kDuplicate, "case '" + r.case_id() + "' appears twice in references", "ref");
    }
    by_case[r.case_id()].ref = &r;
  }
  std::vector<ScoredPair> out;
  for (const auto& [case_id, p] : by_case) {
    if (!p.pred) throw Error(ErrorCode::kValidation, "case '" + case_id + "' has no prediction", "pred");
    if (!p.ref) throw Error(ErrorCode::kValidation, "case '" + case_id + "' has no reference", "ref");
    out.push_back(p);
  }
  if (out.empty()) throw Error(ErrorCode::kInsufficient, "no report pairs to score", "pred");
  return out;
}

using Graphs = std::map<std::string, metrics::AnnotationGraph>;

namespace detail {

inline json interval_json(const metrics::Interval& iv, bool with_ci) {
  return {{"point", iv.point},
          {"ci_lower", with_ci ? json(iv.lower) : json(nullptr)},
          {"ci_upper", with_ci ? json(iv.upper) : json(nullptr)}};
}

template <typename Statistic>
metrics::Interval resampled(std::size_t n, Statistic&& stat, const ScoreOptions& o, const std::string& metric) {
  if (o.n_resamples == 0) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const double v = stat(std::span<const std::size_t>(idx));
    return {v, v, v};
  }
  return metrics::bootstrap_ci_indexed(n, stat, o.n_resamples, o.level, mix_seed(o.seed, metric));
}

inline metrics::Interval mean_of(const std::vector<double>& v, const ScoreOptions& o, const std::string& metric) {
  return resampled(
      v.size(),
      [&](std::span<const std::size_t> idx) {
        double s = 0.0;
        for (auto i : idx) s += v[i];
        return s / static_cast<double>(idx.size());
      },
      o, metric);
}

inline const metrics::AnnotationGraph& graph_for(const Graphs& g, const std::string& report_id, const char* field) {
  const auto it = g.find(report_id);
  if (it == g.end()) throw Error(ErrorCode::kValidation, "no graph for report '" + report_id + "'", field);
  return it->second;
}

inline json f1_metric(const std::vector<ScoredPair>& pairs, std::span<const FindingCategory> cats,
                      const ScoreOptions& o, const std::string& metric, json& by_category) {
  const auto lex = &default_lexicon();
  std::vector<LabelVector> pred, ref;
  for (const auto& p : pairs) {
    pred.push_back(label_report(*p.pred, *lex));
    ref.push_back(label_report(*p.ref, *lex));
  }
  const auto full = metrics::micro_f1(pred, ref, cats, o.uncertain);
  // Per-pair confusion counts, summed over each resample.
  std::vector<metrics::ConfusionCounts> per_pair(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    per_pair[i] = metrics::micro_f1(std::span(&pred[i], 1), std::span(&ref[i], 1), cats, o.uncertain).counts;
  }
  const auto iv = resampled(
      pairs.size(),
      [&](std::span<const std::size_t> idx) {
        metrics::ConfusionCounts c;
        for (auto i : idx) c += per_pair[i];
        return c.f1();
      },
      o, metric);
  json cat_json = json::object();
  for (const auto& [c, cc] : full.by_category) {
    cat_json[std::string(to_string(c))] = {{"f1", cc.f1()},     {"precision", cc.precision()},
                                           {"recall", cc.recall()}, {"tp", cc.tp},
                                           {"fp", cc.fp},       {"fn", cc.fn}};
  }
  by_category = std::move(cat_json);
  auto out = interval_json(iv, o.n_resamples > 0);
  out["precision"] = full.precision;
  out["recall"] = full.recall;
  return out;
}

}  // namespace detail

// Computes every requested metric with a percentile bootstrap over cases.
// Each metric's resampling stream is seeded with mix_seed(seed, name).
// CIDEr-D document frequencies come from the full reference set and stay
// fixed across resamples.
inline json score(std::span<const ReportDocument> pred, std::span<const ReportDocument> ref,
                  const ScoreOptions& o, const Graphs& pred_graphs = {}, const Graphs& ref_graphs = {}) {
  const auto pairs = align(pred, ref);
  const bool with_ci = o.n_resamples > 0;
  auto wants = [&](const char* m) { return std::find(o.metrics.begin(), o.metrics.end(), m) != o.metrics.end(); };

  std::map<std::string, std::future<json>> jobs;
  std::map<std::string, json> by_category;
  if (wants("bleu4")) {
    jobs["bleu4"] = std::async(std::launch::async, [&] {
      std::vector<metrics::BleuStats> stats;
      for (const auto& p : pairs) stats.push_back(metrics::bleu_stats(p.pred->tokens(), p.ref->tokens()));
      return detail::interval_json(detail::resampled(
                                       pairs.size(),
                                       [&](std::span<const std::size_t> idx) {
                                         metrics::BleuStats total;
                                         for (auto i : idx) total += stats[i];
                                         return metrics::bleu_from_stats(total);
                                       },
                                       o, "bleu4"),
                                   with_ci);
    });
  }
  if (wants("rouge")) {
    jobs["rouge"] = std::async(std::launch::async, [&] {
      std::vector<double> v;
      for (const auto& p : pairs) v.push_back(metrics::rouge_l(p.pred->tokens(), p.ref->tokens()));
      auto out = detail::interval_json(detail::mean_of(v, o, "rouge"), with_ci);
      out["beta"] = metrics::kRougeBeta;
      return out;
    });
  }
  if (wants("cider")) {
    jobs["cider"] = std::async(std::launch::async, [&] {
      std::vector<std::vector<TokenSequence>> refs;
      for (const auto& p : pairs) refs.push_back({p.ref->tokens()});
      const metrics::CiderD scorer(refs);
      std::vector<double> v;
      for (std::size_t i = 0; i < pairs.size(); ++i) v.push_back(scorer.score(pairs[i].pred->tokens(), refs[i]));
      return detail::interval_json(detail::mean_of(v, o, "cider"), with_ci);
    });
  }
  if (wants("f1-all")) {
    auto& cats = by_category["f1-all"];
    jobs["f1-all"] = std::async(std::launch::async, [&] {
      return detail::f1_metric(pairs, kAllCategories, o, "f1-all", cats);
    });
  }
  if (wants("f1-top5")) {
    auto& cats = by_category["f1-top5"];
    jobs["f1-top5"] = std::async(std::launch::async, [&] {
      return detail::f1_metric(pairs, top5_categories(), o, "f1-top5", cats);
    });
  }
  if (wants("graph-f1")) {
    std::vector<double> entity, relation, both;
    for (const auto& p : pairs) {
      const auto g = metrics::graph_f1(detail::graph_for(pred_graphs, p.pred->report_id(), "pred_graphs"),
                                       detail::graph_for(ref_graphs, p.ref->report_id(), "ref_graphs"));
      entity.push_back(g.entity_f1);
      relation.push_back(g.relation_f1);
      both.push_back((g.entity_f1 + g.relation_f1) / 2.0);
    }
    jobs["graph-f1"] = std::async(std::launch::async, [&o, with_ci, entity, relation, both] {
      auto out = detail::interval_json(detail::mean_of(both, o, "graph-f1"), with_ci);
      out["entity_f1"] = detail::interval_json(detail::mean_of(entity, o, "graph-f1-entity"), with_ci);
      out["relation_f1"] = detail::interval_json(detail::mean_of(relation, o, "graph-f1-relation"), with_ci);
      return out;
    });
  }

  json out = json::object();
  for (auto& [name, job] : jobs) out[name] = job.get();
  json cats = json::object();
  for (auto& [name, c] : by_category) cats[name] = std::move(c);
  out["by_category"] = std::move(cats);
  out["meta"] = {{"n_pairs", pairs.size()},
                 {"bootstrap", o.n_resamples},
                 {"level", o.level},
                 {"seed", o.seed},
                 {"rng", kRngName},
                 {"uncertain_policy",
                  o.uncertain == metrics::UncertainPolicy::kAsNegative ? "negative" : "positive"}};
  return out;
}

}  // namespace radeval::scoring
