#pragma once

// Rule-based extraction of the 14 finding categories from report text.
//
// Phrases are matched on lowercase word sequences, leftmost-longest, so
// "pleural effusion" wins over "effusion" at the same position. Polarity:
//   NEGATIVE   a negation cue ends at most kCueWindow words before the
//              phrase, in the same sentence;
//   UNCERTAIN  otherwise, a hedging cue lies within kCueWindow words of the
//              phrase on either side, in the same sentence;
//   POSITIVE   otherwise.
// A lexicon entry may override the polarity (explicit normal statements
// such as "no acute process" are always POSITIVE NO_FINDING mentions).

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "radeval/error.hpp"
#include "radeval/report.hpp"
#include "radeval/text.hpp"

namespace radeval {

enum class FindingCategory {
  kAtelectasis,
  kCardiomegaly,
  kConsolidation,
  kEdema,
  kEnlargedCardiomediastinum,
  kFracture,
  kLungLesion,
  kLungOpacity,
  kNoFinding,
  kPleuralEffusion,
  kPleuralOther,
  kPneumonia,
  kPneumothorax,
  kSupportDevices,
};

inline constexpr std::size_t kNumCategories = 14;

inline constexpr std::array<FindingCategory, kNumCategories> kAllCategories = {
    FindingCategory::kAtelectasis,     FindingCategory::kCardiomegaly,
    FindingCategory::kConsolidation,   FindingCategory::kEdema,
    FindingCategory::kEnlargedCardiomediastinum, FindingCategory::kFracture,
    FindingCategory::kLungLesion,      FindingCategory::kLungOpacity,
    FindingCategory::kNoFinding,       FindingCategory::kPleuralEffusion,
    FindingCategory::kPleuralOther,    FindingCategory::kPneumonia,
    FindingCategory::kPneumothorax,    FindingCategory::kSupportDevices,
};

// Serialized names. These are part of the file formats; never rename.
inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "ATELECTASIS",     "CARDIOMEGALY", "CONSOLIDATION",    "EDEMA",
    "ENLARGED_CARDIOMEDIASTINUM",      "FRACTURE",         "LUNG_LESION",
    "LUNG_OPACITY",    "NO_FINDING",   "PLEURAL_EFFUSION", "PLEURAL_OTHER",
    "PNEUMONIA",       "PNEUMOTHORAX", "SUPPORT_DEVICES",
};

inline std::size_t index_of(FindingCategory c) { return static_cast<std::size_t>(c); }
inline std::string_view to_string(FindingCategory c) { return kCategoryNames[index_of(c)]; }

inline std::optional<FindingCategory> parse_category(std::string_view name) {
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    if (text::iequals(kCategoryNames[i], name)) return kAllCategories[i];
  }
  return std::nullopt;
}

// Categories that count as thoracic pathology: all but NO_FINDING and
// SUPPORT_DEVICES.
inline bool is_pathology(FindingCategory c) {
  return c != FindingCategory::kNoFinding && c != FindingCategory::kSupportDevices;
}

inline const std::vector<FindingCategory>& top5_categories() {
  static const std::vector<FindingCategory> kTop5 = {
      FindingCategory::kAtelectasis, FindingCategory::kCardiomegaly, FindingCategory::kEdema,
      FindingCategory::kConsolidation, FindingCategory::kPleuralEffusion};
  return kTop5;
}

// The six conditions with expert labels in the Indian test set.
inline const std::vector<FindingCategory>& expert_labelled_conditions() {
  static const std::vector<FindingCategory> kSix = {
      FindingCategory::kCardiomegaly, FindingCategory::kPleuralEffusion,
      FindingCategory::kLungOpacity,  FindingCategory::kEdema,
      FindingCategory::kEnlargedCardiomediastinum, FindingCategory::kFracture};
  return kSix;
}

enum class Polarity { kPositive, kNegative, kUncertain };

enum class LabelValue { kNotMentioned, kNegative, kUncertain, kPositive };

inline LabelValue to_label(Polarity p) {
  switch (p) {
    case Polarity::kPositive: return LabelValue::kPositive;
    case Polarity::kNegative: return LabelValue::kNegative;
    case Polarity::kUncertain: return LabelValue::kUncertain;
  }
  return LabelValue::kNotMentioned;
}

inline std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::kPositive: return "POSITIVE";
    case Polarity::kNegative: return "NEGATIVE";
    case Polarity::kUncertain: return "UNCERTAIN";
  }
  return "?";
}

inline std::optional<Polarity> parse_polarity(std::string_view s) {
  if (text::iequals(s, "POSITIVE")) return Polarity::kPositive;
  if (text::iequals(s, "NEGATIVE")) return Polarity::kNegative;
  if (text::iequals(s, "UNCERTAIN")) return Polarity::kUncertain;
  return std::nullopt;
}

// P / N / U / "" as used in labels.csv.
inline std::string_view short_code(LabelValue v) {
  switch (v) {
    case LabelValue::kPositive: return "P";
    case LabelValue::kNegative: return "N";
    case LabelValue::kUncertain: return "U";
    case LabelValue::kNotMentioned: return "";
  }
  return "";
}

// Precedence order POSITIVE > UNCERTAIN > NEGATIVE > NOT_MENTIONED.
inline int precedence(LabelValue v) {
  switch (v) {
    case LabelValue::kPositive: return 3;
    case LabelValue::kUncertain: return 2;
    case LabelValue::kNegative: return 1;
    case LabelValue::kNotMentioned: return 0;
  }
  return 0;
}

struct Mention {
  FindingCategory category;
  std::size_t begin = 0;  // inclusive byte offset into the source text
  std::size_t end = 0;    // exclusive
  Polarity polarity = Polarity::kPositive;
  bool operator==(const Mention&) const = default;
};

class LabelVector {
 public:
  LabelVector() { values_.fill(LabelValue::kNotMentioned); }

  LabelValue& operator[](FindingCategory c) { return values_[index_of(c)]; }
  LabelValue operator[](FindingCategory c) const { return values_[index_of(c)]; }

  bool operator==(const LabelVector&) const = default;

 private:
  std::array<LabelValue, kNumCategories> values_;
};

struct LexiconEntry {
  FindingCategory category;
  std::vector<std::string> words;  // tokenized phrase
  std::optional<Polarity> polarity_override;
};

struct Lexicon {
  int version = 0;
  std::vector<LexiconEntry> entries;
  std::vector<std::vector<std::string>> negation_cues;
  std::vector<std::vector<std::string>> uncertainty_cues;
};

inline constexpr std::size_t kCueWindow = 6;

// Tab-separated: "CATEGORY<TAB>phrase[<TAB>POLARITY]"; cue lines use the
// pseudo-categories @negation and @uncertainty; "version<TAB>N" sets the
// lexicon version; '#' starts a comment line.
inline Lexicon parse_lexicon(std::string_view content) {
  Lexicon lex;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    const auto where = "lexicon line " + std::to_string(line_no);
    if (cols.size() < 2 || cols.size() > 3) {
      throw Error(ErrorCode::kSchema, where + ": expected 2 or 3 tab-separated columns");
    }
    if (cols[0] == "version") {
      lex.version = std::stoi(cols[1]);
      continue;
    }
    auto words = tokenize(cols[1]);
    if (words.empty()) throw Error(ErrorCode::kSchema, where + ": empty phrase");
    if (cols[0] == "@negation") {
      lex.negation_cues.push_back(std::move(words));
      continue;
    }
    if (cols[0] == "@uncertainty") {
      lex.uncertainty_cues.push_back(std::move(words));
      continue;
    }
    const auto cat = parse_category(cols[0]);
    if (!cat) throw Error(ErrorCode::kSchema, where + ": unknown category '" + cols[0] + "'");
    LexiconEntry e{*cat, std::move(words), std::nullopt};
    if (cols.size() == 3 && !cols[2].empty()) {
      e.polarity_override = parse_polarity(cols[2]);
      if (!e.polarity_override) {
        throw Error(ErrorCode::kSchema, where + ": unknown polarity '" + cols[2] + "'");
      }
    }
    lex.entries.push_back(std::move(e));
  }
  return lex;
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot read lexicon " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_lexicon(ss.str());
}

// Kept byte-identical to data/finding_lexicon.tsv.
inline constexpr std::string_view kDefaultLexiconText =
    "# radeval finding lexicon\n"
    "version\t1\n"
    "ATELECTASIS\tatelectasis\n"
    "ATELECTASIS\tatelectatic\n"
    "CARDIOMEGALY\tcardiomegaly\n"
    "CARDIOMEGALY\tenlarged heart\n"
    "CARDIOMEGALY\theart size is enlarged\n"
    "CARDIOMEGALY\theart is enlarged\n"
    "CARDIOMEGALY\tcardiac enlargement\n"
    "CARDIOMEGALY\tenlarged cardiac silhouette\n"
    "CONSOLIDATION\tconsolidation\n"
    "CONSOLIDATION\tconsolidations\n"
    "CONSOLIDATION\tconsolidative\n"
    "EDEMA\tedema\n"
    "EDEMA\tpulmonary edema\n"
    "EDEMA\tvascular congestion\n"
    "EDEMA\tpulmonary vascular congestion\n"
    "ENLARGED_CARDIOMEDIASTINUM\tenlarged cardiomediastinum\n"
    "ENLARGED_CARDIOMEDIASTINUM\twidened mediastinum\n"
    "ENLARGED_CARDIOMEDIASTINUM\tmediastinal widening\n"
    "ENLARGED_CARDIOMEDIASTINUM\tenlarged mediastinum\n"
    "FRACTURE\tfracture\n"
    "FRACTURE\tfractures\n"
    "FRACTURE\tfractured\n"
    "LUNG_LESION\tnodule\n"
    "LUNG_LESION\tnodules\n"
    "LUNG_LESION\tmass\n"
    "LUNG_LESION\tlung lesion\n"
    "LUNG_LESION\tcavitary lesion\n"
    "LUNG_OPACITY\topacity\n"
    "LUNG_OPACITY\topacities\n"
    "LUNG_OPACITY\topacification\n"
    "LUNG_OPACITY\tinfiltrate\n"
    "LUNG_OPACITY\tairspace disease\n"
    "NO_FINDING\tno acute cardiopulmonary process\tPOSITIVE\n"
    "NO_FINDING\tno acute cardiopulmonary abnormality\tPOSITIVE\n"
    "NO_FINDING\tno acute process\tPOSITIVE\n"
    "NO_FINDING\tno acute abnormality\tPOSITIVE\n"
    "NO_FINDING\tlungs are clear\tPOSITIVE\n"
    "NO_FINDING\tnormal chest radiograph\tPOSITIVE\n"
    "PLEURAL_EFFUSION\tpleural effusion\n"
    "PLEURAL_EFFUSION\tpleural effusions\n"
    "PLEURAL_EFFUSION\teffusion\n"
    "PLEURAL_EFFUSION\teffusions\n"
    "PLEURAL_EFFUSION\tpleural fluid\n"
    "PLEURAL_OTHER\tpleural thickening\n"
    "PLEURAL_OTHER\tpleural scarring\n"
    "PLEURAL_OTHER\tpleural plaque\n"
    "PLEURAL_OTHER\tfibrothorax\n"
    "PNEUMONIA\tpneumonia\n"
    "PNEUMONIA\tinfectious process\n"
    "PNEUMOTHORAX\tpneumothorax\n"
    "PNEUMOTHORAX\tpneumothoraces\n"
    "SUPPORT_DEVICES\tpacemaker\n"
    "SUPPORT_DEVICES\tendotracheal tube\n"
    "SUPPORT_DEVICES\tpicc\n"
    "SUPPORT_DEVICES\tcentral venous catheter\n"
    "SUPPORT_DEVICES\tnasogastric tube\n"
    "SUPPORT_DEVICES\tenteric tube\n"
    "SUPPORT_DEVICES\tchest tube\n"
    "SUPPORT_DEVICES\tsternotomy wires\n"
    "@negation\tno\n"
    "@negation\twithout\n"
    "@negation\tfree of\n"
    "@negation\tclear of\n"
    "@negation\tresolved\n"
    "@negation\tnegative for\n"
    "@uncertainty\tmay\n"
    "@uncertainty\tpossible\n"
    "@uncertainty\tpossibly\n"
    "@uncertainty\tcannot be excluded\n"
    "@uncertainty\tquestionable\n"
    "@uncertainty\tdifficult to exclude\n";

inline const Lexicon& default_lexicon() {
  static const Lexicon kLexicon = parse_lexicon(kDefaultLexiconText);
  return kLexicon;
}

struct Sentence {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Splits on '.', '?' or '!' followed by whitespace or end of text, except
// after a known abbreviation.
inline std::vector<Sentence> split_sentences(std::string_view s) {
  static const std::array<std::string_view, 9> kAbbreviations = {
      "dr", "mr", "mrs", "ms", "vs", "e.g", "i.e", "approx", "etc"};
  std::vector<Sentence> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c != '.' && c != '?' && c != '!') continue;
    if (i + 1 < s.size() && !text::is_space(s[i + 1])) continue;
    if (c == '.') {
      std::size_t w = i;
      while (w > start && !text::is_space(s[w - 1])) --w;
      const auto word = text::to_lower(s.substr(w, i - w));
      if (std::find(kAbbreviations.begin(), kAbbreviations.end(), word) !=
          kAbbreviations.end()) {
        continue;
      }
    }
    out.push_back({start, i + 1});
    start = i + 1;
  }
  if (start < s.size()) out.push_back({start, s.size()});
  return out;
}

namespace detail {

inline bool words_match(const std::vector<text::Word>& ws, std::size_t at,
                        const std::vector<std::string>& phrase) {
  if (at + phrase.size() > ws.size()) return false;
  for (std::size_t k = 0; k < phrase.size(); ++k) {
    if (ws[at + k].text != phrase[k]) return false;
  }
  return true;
}

inline Polarity cue_polarity(const std::vector<text::Word>& ws, std::size_t first,
                             std::size_t last, const Lexicon& lex) {
  // Negation: cue [s, s+len) with s+len <= first and first - (s+len) < window,
  // i.e. the cue ends within the kCueWindow words before the phrase.
  for (const auto& cue : lex.negation_cues) {
    for (std::size_t s = 0; s + cue.size() <= first; ++s) {
      if (first - (s + cue.size()) >= kCueWindow) continue;
      if (words_match(ws, s, cue)) return Polarity::kNegative;
    }
  }
  for (const auto& cue : lex.uncertainty_cues) {
    for (std::size_t s = 0; s + cue.size() <= ws.size(); ++s) {
      const std::size_t cue_end = s + cue.size();
      const bool before = cue_end <= first && first - cue_end < kCueWindow;
      const bool after = s > last && s - last <= kCueWindow;
      if ((before || after) && words_match(ws, s, cue)) return Polarity::kUncertain;
    }
  }
  return Polarity::kPositive;
}

}  // namespace detail

// Mentions in `s`, sorted by span start. `offset` is added to every span.
inline std::vector<Mention> extract_mentions(std::string_view s, const Lexicon& lex,
                                             std::size_t offset = 0) {
  std::vector<Mention> out;
  for (const auto& sent : split_sentences(s)) {
    const auto ws = text::words(s.substr(sent.begin, sent.end - sent.begin), sent.begin);
    std::size_t i = 0;
    while (i < ws.size()) {
      std::size_t best = 0;
      for (const auto& e : lex.entries) {
        if (e.words.size() > best && detail::words_match(ws, i, e.words)) best = e.words.size();
      }
      if (best == 0) {
        ++i;
        continue;
      }
      const std::size_t last = i + best - 1;
      std::vector<FindingCategory> seen;
      for (const auto& e : lex.entries) {
        if (e.words.size() != best || !detail::words_match(ws, i, e.words)) continue;
        if (std::find(seen.begin(), seen.end(), e.category) != seen.end()) continue;
        seen.push_back(e.category);
        const Polarity p =
            e.polarity_override ? *e.polarity_override : detail::cue_polarity(ws, i, last, lex);
        out.push_back({e.category, offset + ws[i].begin, offset + ws[last].end, p});
      }
      i += best;
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Mention& a, const Mention& b) { return a.begin < b.begin; });
  return out;
}

// Sections are labelled separately so a sentence never spans the
// findings/impression boundary. Spans index report.full_text().
inline std::vector<Mention> extract_mentions(const ReportDocument& report, const Lexicon& lex) {
  auto out = extract_mentions(report.findings(), lex);
  const std::size_t shift = report.findings().empty() ? 0 : report.findings().size() + 1;
  auto imp = extract_mentions(report.impression(), lex, shift);
  out.insert(out.end(), imp.begin(), imp.end());
  return out;
}

inline LabelVector aggregate_labels(const std::vector<Mention>& mentions) {
  LabelVector v;
  bool normal_statement = false;
  for (const auto& m : mentions) {
    if (m.category == FindingCategory::kNoFinding) {
      if (m.polarity == Polarity::kPositive) normal_statement = true;
      continue;
    }
    const auto value = to_label(m.polarity);
    if (precedence(value) > precedence(v[m.category])) v[m.category] = value;
  }
  bool pathology = false;
  for (auto c : kAllCategories) {
    if (!is_pathology(c)) continue;
    if (v[c] == LabelValue::kPositive || v[c] == LabelValue::kUncertain) pathology = true;
  }
  if (normal_statement && !pathology) v[FindingCategory::kNoFinding] = LabelValue::kPositive;
  return v;
}

// Flag-selectable reading of "abnormal". The defaults count only POSITIVE
// pathology categories.
struct AbnormalityPolicy {
  bool count_support_devices = false;
  bool uncertain_is_abnormal = false;
};

inline int derive_abnormality(const LabelVector& labels, AbnormalityPolicy policy = {}) {
  for (auto c : kAllCategories) {
    const bool counted = is_pathology(c) ||
                         (policy.count_support_devices && c == FindingCategory::kSupportDevices);
    if (!counted) continue;
    if (labels[c] == LabelValue::kPositive) return 1;
    if (policy.uncertain_is_abnormal && labels[c] == LabelValue::kUncertain) return 1;
  }
  return 0;
}

inline LabelVector label_text(std::string_view s, const Lexicon& lex = default_lexicon()) {
  return aggregate_labels(extract_mentions(s, lex));
}

inline LabelVector label_report(const ReportDocument& r, const Lexicon& lex = default_lexicon()) {
  return aggregate_labels(extract_mentions(r, lex));
}

}  // namespace radeval
