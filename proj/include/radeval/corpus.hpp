#pragma once

// Report corpus ingest, training-set filtering, inverse-prevalence example
// weights and stratified study samples.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/csv.hpp"
#include "radeval/error.hpp"
#include "radeval/labeler.hpp"
#include "radeval/random.hpp"
#include "radeval/report.hpp"
#include "radeval/text.hpp"

namespace radeval {

enum class DatasetTag { kUs, kIndia, kSynthetic };
enum class View { kAp, kPa, kLateral, kUnknown };
enum class Stratum { kNormal, kAbnormal, kUnlabeled };
enum class Split { kTrain, kValidation, kTest };

inline const char* to_string(DatasetTag t) {
  switch (t) {
    case DatasetTag::kUs: return "US";
    case DatasetTag::kIndia: return "INDIA";
    case DatasetTag::kSynthetic: return "SYNTHETIC";
  }
  return "?";
}
inline const char* to_string(View v) {
  switch (v) {
    case View::kAp: return "AP";
    case View::kPa: return "PA";
    case View::kLateral: return "LATERAL";
    case View::kUnknown: return "UNKNOWN";
  }
  return "?";
}
inline const char* to_string(Stratum s) {
  switch (s) {
    case Stratum::kNormal: return "NORMAL";
    case Stratum::kAbnormal: return "ABNORMAL";
    case Stratum::kUnlabeled: return "UNLABELED";
  }
  return "?";
}
inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "TRAIN";
    case Split::kValidation: return "VALIDATION";
    case Split::kTest: return "TEST";
  }
  return "?";
}

namespace detail {
template <typename E, std::size_t N>
std::optional<E> parse_enum(std::string_view s, const std::array<E, N>& values) {
  for (E v : values) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}
}  // namespace detail

inline std::optional<DatasetTag> parse_dataset_tag(std::string_view s) {
  return detail::parse_enum(s, std::array{DatasetTag::kUs, DatasetTag::kIndia, DatasetTag::kSynthetic});
}
inline std::optional<View> parse_view(std::string_view s) {
  return detail::parse_enum(s, std::array{View::kAp, View::kPa, View::kLateral, View::kUnknown});
}
inline std::optional<Stratum> parse_stratum(std::string_view s) {
  return detail::parse_enum(s, std::array{Stratum::kNormal, Stratum::kAbnormal, Stratum::kUnlabeled});
}
inline std::optional<Split> parse_split(std::string_view s) {
  return detail::parse_enum(s, std::array{Split::kTrain, Split::kValidation, Split::kTest});
}

struct CaseRecord {
  std::string case_id;
  DatasetTag dataset_tag = DatasetTag::kSynthetic;
  std::string image_ref;
  View view = View::kUnknown;
  Stratum stratum = Stratum::kUnlabeled;
  Split split = Split::kTest;
  bool operator==(const CaseRecord&) const = default;
};

struct CorpusEntry {
  CaseRecord record;
  ReportDocument report;
  bool operator==(const CorpusEntry&) const = default;
};

// An immutable collection of cases with unique ids, in ingest order.
class Corpus {
 public:
  Corpus() = default;

  // Throws kDuplicate on a repeated case_id.
  explicit Corpus(std::vector<CorpusEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!index_.emplace(entries_[i].record.case_id, i).second) {
        throw Error(ErrorCode::kDuplicate, "duplicate case_id '" + entries_[i].record.case_id + "'",
                    "case_id");
      }
    }
  }

  const std::vector<CorpusEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const CorpusEntry* find(const std::string& case_id) const {
    const auto it = index_.find(case_id);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  const CorpusEntry& at(const std::string& case_id) const {
    const auto* e = find(case_id);
    if (!e) throw Error(ErrorCode::kNotFound, "unknown case_id '" + case_id + "'", "case_id");
    return *e;
  }

  std::size_t count(Split split) const {
    return static_cast<std::size_t>(std::count_if(
        entries_.begin(), entries_.end(), [&](const auto& e) { return e.record.split == split; }));
  }

  bool operator==(const Corpus& o) const { return entries_ == o.entries_; }

 private:
  std::vector<CorpusEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Rejection {
  std::size_t line = 0;
  std::string reason;
};

struct IngestResult {
  Corpus corpus;
  std::vector<Rejection> rejections;
};

enum class CorpusFormat { kJsonl, kCsv };

namespace detail {

struct RawCase {
  std::optional<std::string> case_id, dataset_tag, image_ref, view, split, source, stratum,
      report_id, raw, findings, impression;
};

// Returns the rejection reason, or an entry.
inline std::variant<std::string, CorpusEntry> build_entry(const RawCase& r) {
  auto need = [](const std::optional<std::string>& v) { return v && !v->empty(); };
  for (auto [value, name] : {std::pair{&r.case_id, "case_id"}, {&r.dataset_tag, "dataset_tag"},
                             {&r.image_ref, "image_ref"}, {&r.view, "view"}, {&r.split, "split"}}) {
    if (!need(*value)) return std::string("missing field '") + name + "'";
  }
  CorpusEntry e;
  e.record.case_id = *r.case_id;
  e.record.image_ref = *r.image_ref;
  const auto tag = parse_dataset_tag(*r.dataset_tag);
  if (!tag) return "invalid dataset_tag '" + *r.dataset_tag + "'";
  e.record.dataset_tag = *tag;
  const auto view = parse_view(*r.view);
  if (!view) return "invalid view '" + *r.view + "'";
  e.record.view = *view;
  const auto split = parse_split(*r.split);
  if (!split) return "invalid split '" + *r.split + "'";
  e.record.split = *split;
  if (need(r.stratum)) {
    const auto s = parse_stratum(*r.stratum);
    if (!s) return "invalid stratum '" + *r.stratum + "'";
    e.record.stratum = *s;
  }
  ReportSource source = ReportSource::kHumanOriginal;
  if (need(r.source)) {
    try {
      source = parse_report_source(*r.source);
    } catch (const Error&) {
      return "invalid source '" + *r.source + "'";
    }
  }
  Sections sections;
  if (r.raw) {
    auto s = extract_sections(*r.raw);
    if (!s) return std::string("empty impression");
    sections = std::move(*s);
  } else if (r.findings || r.impression) {
    sections.findings = text::normalize_whitespace(r.findings.value_or(""));
    sections.impression = text::normalize_whitespace(r.impression.value_or(""));
    if (sections.impression.empty()) return std::string("empty impression");
  } else {
    return std::string("missing field 'report'");
  }
  const std::string report_id = need(r.report_id) ? *r.report_id : *r.case_id;
  e.report = ReportDocument(report_id, *r.case_id, std::move(sections), source);
  return e;
}

inline std::optional<std::string> json_string(const nlohmann::json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw Error(ErrorCode::kSchema, std::string("field '") + key + "' must be a string", key);
  return it->get<std::string>();
}

inline RawCase raw_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kSchema, "record is not a JSON object");
  RawCase r;
  r.case_id = json_string(j, "case_id");
  r.dataset_tag = json_string(j, "dataset_tag");
  r.image_ref = json_string(j, "image_ref");
  r.view = json_string(j, "view");
  r.split = json_string(j, "split");
  r.source = json_string(j, "source");
  r.stratum = json_string(j, "stratum");
  r.report_id = json_string(j, "report_id");
  const auto rep = j.find("report");
  if (rep != j.end() && !rep->is_null()) {
    if (!rep->is_object()) throw Error(ErrorCode::kSchema, "field 'report' must be an object", "report");
    r.raw = json_string(*rep, "raw");
    r.findings = json_string(*rep, "findings");
    r.impression = json_string(*rep, "impression");
  }
  return r;
}

inline void admit(std::variant<std::string, CorpusEntry> built, std::size_t line,
                  std::vector<CorpusEntry>& admitted, std::set<std::string>& ids,
                  std::vector<Rejection>& rejections) {
  if (auto* reason = std::get_if<std::string>(&built)) {
    rejections.push_back({line, std::move(*reason)});
    return;
  }
  auto& entry = std::get<CorpusEntry>(built);
  if (!ids.insert(entry.record.case_id).second) {
    rejections.push_back({line, "duplicate case_id '" + entry.record.case_id + "'"});
    return;
  }
  admitted.push_back(std::move(entry));
}

}  // namespace detail

inline IngestResult ingest_jsonl(std::istream& in) {
  std::vector<CorpusEntry> admitted;
  std::vector<Rejection> rejections;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::normalize_whitespace(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      rejections.push_back({line_no, "invalid JSON"});
      continue;
    }
    try {
      detail::admit(detail::build_entry(detail::raw_from_json(j)), line_no, admitted, ids, rejections);
    } catch (const Error& e) {
      rejections.push_back({line_no, e.what()});
    }
  }
  return {Corpus(std::move(admitted)), std::move(rejections)};
}

// Header row required. Recognized columns: case_id, dataset_tag, image_ref,
// view, split, source, stratum, report_id, and either raw or
// findings/impression. Unknown columns are ignored.
inline IngestResult ingest_csv(std::istream& in) {
  const auto rows = csv::read(in);
  std::vector<CorpusEntry> admitted;
  std::vector<Rejection> rejections;
  if (rows.empty()) return {};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) col[rows[0].fields[i]] = i;
  std::set<std::string> ids;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    auto get = [&](const char* name) -> std::optional<std::string> {
      const auto it = col.find(name);
      if (it == col.end() || it->second >= f.size()) return std::nullopt;
      return f[it->second];
    };
    detail::RawCase raw;
    raw.case_id = get("case_id");
    raw.dataset_tag = get("dataset_tag");
    raw.image_ref = get("image_ref");
    raw.view = get("view");
    raw.split = get("split");
    raw.source = get("source");
    raw.stratum = get("stratum");
    raw.report_id = get("report_id");
    raw.raw = get("raw");
    if (raw.raw && raw.raw->empty()) raw.raw.reset();
    raw.findings = get("findings");
    raw.impression = get("impression");
    if (!raw.raw && raw.impression && raw.impression->empty() && !raw.findings) raw.impression.reset();
    detail::admit(detail::build_entry(raw), rows[r].line, admitted, ids, rejections);
  }
  return {Corpus(std::move(admitted)), std::move(rejections)};
}

inline IngestResult ingest_corpus(const std::string& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read corpus file " + path, "path");
  return format == CorpusFormat::kJsonl ? ingest_jsonl(in) : ingest_csv(in);
}

inline nlohmann::json to_json(const CorpusEntry& e) {
  return {
      {"case_id", e.record.case_id},
      {"dataset_tag", to_string(e.record.dataset_tag)},
      {"image_ref", e.record.image_ref},
      {"view", to_string(e.record.view)},
      {"split", to_string(e.record.split)},
      {"stratum", to_string(e.record.stratum)},
      {"source", to_string(e.report.source())},
      {"report_id", e.report.report_id()},
      {"report", {{"findings", e.report.findings()}, {"impression", e.report.impression()}}},
  };
}

inline void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& e : corpus.entries()) out << to_json(e).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Prior-reference detection

inline constexpr std::string_view kDefaultPriorReferenceText =
    "# radeval prior-reference lexicon\n"
    "version\t1\n"
    "compared to\n"
    "compared with\n"
    "in comparison\n"
    "prior exam\n"
    "prior study\n"
    "prior radiograph\n"
    "previous radiograph\n"
    "previous exam\n"
    "previous study\n"
    "since prior\n"
    "since the prior\n"
    "unchanged\n"
    "interval\n";

struct PriorReferenceLexicon {
  int version = 0;
  std::vector<TokenSequence> patterns;
};

inline PriorReferenceLexicon parse_prior_reference_lexicon(std::string_view content) {
  PriorReferenceLexicon lex;
  std::istringstream in{std::string(content)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("version\t", 0) == 0) {
      lex.version = std::stoi(line.substr(8));
      continue;
    }
    auto words = tokenize(line);
    if (!words.empty()) lex.patterns.push_back(std::move(words));
  }
  return lex;
}

inline const PriorReferenceLexicon& default_prior_reference_lexicon() {
  static const PriorReferenceLexicon kLex = parse_prior_reference_lexicon(kDefaultPriorReferenceText);
  return kLex;
}

// Case-insensitive, whole-word phrase match against either section.
inline bool detect_prior_reference(const ReportDocument& report,
                                   const PriorReferenceLexicon& lexicon) {
  if (lexicon.patterns.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "prior-reference lexicon is empty", "lexicon");
  }
  for (const std::string* section : {&report.findings(), &report.impression()}) {
    const auto words = tokenize(text::normalize_whitespace(*section));
    for (const auto& p : lexicon.patterns) {
      if (p.size() > words.size()) continue;
      for (std::size_t i = 0; i + p.size() <= words.size(); ++i) {
        if (std::equal(p.begin(), p.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
          return true;
        }
      }
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Training-set filter

enum class RemovalReason { kLateralView, kNoImpression, kPriorReference };

inline const char* to_string(RemovalReason r) {
  switch (r) {
    case RemovalReason::kLateralView: return "lateral_view";
    case RemovalReason::kNoImpression: return "no_impression";
    case RemovalReason::kPriorReference: return "prior_reference";
  }
  return "?";
}

struct Removal {
  std::string case_id;
  RemovalReason reason;
};

struct FilterResult {
  Corpus corpus;
  std::vector<Removal> removed;
};

// Drops lateral-view, impression-less and prior-referencing cases from the
// TRAIN split. Other splits pass through untouched.
inline FilterResult filter_training_set(
    const Corpus& corpus, const PriorReferenceLexicon& lexicon = default_prior_reference_lexicon()) {
  std::vector<CorpusEntry> kept;
  std::vector<Removal> removed;
  for (const auto& e : corpus.entries()) {
    if (e.record.split != Split::kTrain) {
      kept.push_back(e);
      continue;
    }
    std::optional<RemovalReason> reason;
    if (e.record.view == View::kLateral) {
      reason = RemovalReason::kLateralView;
    } else if (e.report.impression().empty()) {
      reason = RemovalReason::kNoImpression;
    } else if (detect_prior_reference(e.report, lexicon)) {
      reason = RemovalReason::kPriorReference;
    }
    if (reason) {
      removed.push_back({e.record.case_id, *reason});
    } else {
      kept.push_back(e);
    }
  }
  return {Corpus(std::move(kept)), std::move(removed)};
}

// Labels every UNLABELED case from its report text.
inline Corpus derive_strata(const Corpus& corpus, const Lexicon& lexicon = default_lexicon(),
                            AbnormalityPolicy policy = {}) {
  std::vector<CorpusEntry> out = corpus.entries();
  for (auto& e : out) {
    if (e.record.stratum != Stratum::kUnlabeled) continue;
    e.record.stratum = derive_abnormality(label_report(e.report, lexicon), policy) ? Stratum::kAbnormal
                                                                                   : Stratum::kNormal;
  }
  return Corpus(std::move(out));
}

// ---------------------------------------------------------------------------
// Training mix

// Per-dataset coefficients of the weighted training objective. No defaults
// are asserted; the caller supplies tuned values.
struct TrainingMixConfig {
  double lambda_us = 0.0;
  double lambda_india = 0.0;
  PriorReferenceLexicon prior_reference_lexicon = default_prior_reference_lexicon();

  void validate() const {
    if (!(lambda_us >= 0.0) || !(lambda_india >= 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "training mix coefficients must be nonnegative", "lambda");
    }
    if (!(lambda_us + lambda_india > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "training mix coefficients must not both be zero", "lambda");
    }
  }

  // The coefficient for a dataset; SYNTHETIC cases carry none.
  double lambda(DatasetTag tag) const {
    switch (tag) {
      case DatasetTag::kUs: return lambda_us;
      case DatasetTag::kIndia: return lambda_india;
      case DatasetTag::kSynthetic: break;
    }
    throw Error(ErrorCode::kInvalidArgument, "no training mix coefficient for SYNTHETIC", "dataset_tag");
  }
};

// ---------------------------------------------------------------------------
// Example weights

struct ExampleWeight {
  std::string case_id;
  DatasetTag dataset_tag;
  Stratum stratum;
  double weight = 0.0;
};

// Inverse-prevalence weights per dataset over the TRAIN split: a NORMAL
// case weighs 1/p_normal and an ABNORMAL case 1/(1 - p_normal), so both
// strata carry the same total mass.
inline std::vector<ExampleWeight> compute_example_weights(const Corpus& corpus) {
  struct Counts {
    std::size_t normal = 0, total = 0;
  };
  std::map<DatasetTag, Counts> counts;
  for (const auto& e : corpus.entries()) {
    if (e.record.split != Split::kTrain) continue;
    if (e.record.stratum == Stratum::kUnlabeled) {
      throw Error(ErrorCode::kInvalidArgument,
                  "case '" + e.record.case_id + "' is UNLABELED; derive strata first", "stratum");
    }
    auto& c = counts[e.record.dataset_tag];
    ++c.total;
    if (e.record.stratum == Stratum::kNormal) ++c.normal;
  }
  if (counts.empty()) throw Error(ErrorCode::kInsufficient, "TRAIN split contains no cases", "split");
  for (const auto& [tag, c] : counts) {
    if (c.normal == 0 || c.normal == c.total) {
      throw Error(ErrorCode::kDegenerate,
                  std::string("degenerate prevalence: TRAIN split of ") + to_string(tag) +
                      " contains a single stratum",
                  "dataset_tag");
    }
  }
  std::vector<ExampleWeight> out;
  for (const auto& e : corpus.entries()) {
    if (e.record.split != Split::kTrain) continue;
    const auto& c = counts[e.record.dataset_tag];
    const double total = static_cast<double>(c.total);
    const double n = e.record.stratum == Stratum::kNormal ? static_cast<double>(c.normal)
                                                          : static_cast<double>(c.total - c.normal);
    out.push_back({e.record.case_id, e.record.dataset_tag, e.record.stratum, total / n});
  }
  return out;
}

inline void write_weights_csv(const std::vector<ExampleWeight>& weights, std::ostream& out) {
  out << "case_id,dataset_tag,stratum,weight\n";
  for (const auto& w : weights) {
    std::ostringstream value;
    value << std::fixed << std::setprecision(6) << w.weight;
    csv::write_row(out, {w.case_id, to_string(w.dataset_tag), to_string(w.stratum), value.str()});
  }
}

// ---------------------------------------------------------------------------
// Stratified sampling

struct SampleFilter {
  std::optional<Split> split;
  std::optional<DatasetTag> dataset_tag;
};

struct SampleManifest {
  std::uint64_t seed = 0;
  std::string rng = std::string(kRngName);
  std::size_t n_normal = 0;
  std::size_t n_abnormal = 0;
  std::vector<std::string> case_ids;  // NORMAL draws first, then ABNORMAL
};

// Candidates per stratum are ordered by case_id, then drawn by a partial
// Fisher-Yates pass over one mt19937_64 stream: NORMAL first, ABNORMAL second.
inline SampleManifest stratified_sample(const Corpus& corpus, std::size_t n_normal,
                                        std::size_t n_abnormal, std::uint64_t seed,
                                        const SampleFilter& filter = {}) {
  std::vector<std::string> normal, abnormal;
  for (const auto& e : corpus.entries()) {
    if (filter.split && e.record.split != *filter.split) continue;
    if (filter.dataset_tag && e.record.dataset_tag != *filter.dataset_tag) continue;
    if (e.record.stratum == Stratum::kNormal) normal.push_back(e.record.case_id);
    if (e.record.stratum == Stratum::kAbnormal) abnormal.push_back(e.record.case_id);
  }
  if (normal.size() < n_normal) {
    throw Error(ErrorCode::kInsufficient,
                "requested " + std::to_string(n_normal) + " NORMAL cases, only " +
                    std::to_string(normal.size()) + " available",
                "n_normal");
  }
  if (abnormal.size() < n_abnormal) {
    throw Error(ErrorCode::kInsufficient,
                "requested " + std::to_string(n_abnormal) + " ABNORMAL cases, only " +
                    std::to_string(abnormal.size()) + " available",
                "n_abnormal");
  }
  std::sort(normal.begin(), normal.end());
  std::sort(abnormal.begin(), abnormal.end());
  Rng rng(seed);
  SampleManifest m;
  m.seed = seed;
  m.n_normal = n_normal;
  m.n_abnormal = n_abnormal;
  m.case_ids = sample_without_replacement(std::move(normal), n_normal, rng);
  auto ab = sample_without_replacement(std::move(abnormal), n_abnormal, rng);
  m.case_ids.insert(m.case_ids.end(), ab.begin(), ab.end());
  return m;
}

inline nlohmann::json to_json(const SampleManifest& m) {
  return {{"seed", m.seed}, {"rng", m.rng}, {"n_normal", m.n_normal},
          {"n_abnormal", m.n_abnormal}, {"case_ids", m.case_ids}};
}

inline SampleManifest sample_manifest_from_json(const nlohmann::json& j) {
  SampleManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.rng = j.at("rng").get<std::string>();
  m.n_normal = j.at("n_normal").get<std::size_t>();
  m.n_abnormal = j.at("n_abnormal").get<std::size_t>();
  m.case_ids = j.at("case_ids").get<std::vector<std::string>>();
  return m;
}

}  // namespace radeval
