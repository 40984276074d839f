#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "radeval/error.hpp"
#include "radeval/text.hpp"

namespace radeval {

enum class ReportSource { kHumanOriginal, kModelGenerated, kClinicianAiEdited };

inline const char* to_string(ReportSource s) {
  switch (s) {
    case ReportSource::kHumanOriginal: return "HUMAN_ORIGINAL";
    case ReportSource::kModelGenerated: return "MODEL_GENERATED";
    case ReportSource::kClinicianAiEdited: return "CLINICIAN_AI_EDITED";
  }
  return "?";
}

inline ReportSource parse_report_source(std::string_view s) {
  if (s == "HUMAN_ORIGINAL") return ReportSource::kHumanOriginal;
  if (s == "MODEL_GENERATED") return ReportSource::kModelGenerated;
  if (s == "CLINICIAN_AI_EDITED") return ReportSource::kClinicianAiEdited;
  throw Error(ErrorCode::kSchema, "unknown report source '" + std::string(s) + "'", "source");
}

struct Sections {
  std::string findings;
  std::string impression;
  bool operator==(const Sections&) const = default;
};

namespace detail {

// Finds `marker` (case-insensitive) at a line start, allowing leading
// spaces or tabs. Returns the offset of the marker itself.
inline std::optional<std::size_t> find_marker(std::string_view raw, std::string_view marker) {
  std::size_t line = 0;
  while (line <= raw.size()) {
    std::size_t i = line;
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t' || raw[i] == '\r' ||
                              raw[i] == '\f' || raw[i] == '\v')) {
      ++i;
    }
    if (raw.size() - i >= marker.size() && text::iequals(raw.substr(i, marker.size()), marker)) {
      return i;
    }
    const auto nl = raw.find('\n', line);
    if (nl == std::string_view::npos) break;
    line = nl + 1;
  }
  return std::nullopt;
}

}  // namespace detail

inline constexpr std::string_view kFindingsMarker = "FINDINGS:";
inline constexpr std::string_view kImpressionMarker = "IMPRESSION:";

// Splits a raw report into whitespace-normalized FINDINGS and IMPRESSION
// sections. Markers are matched case-insensitively at line starts. A
// section runs until the other marker or the end of the text. Returns
// nullopt when there is no impression marker or the impression is empty;
// a missing FINDINGS marker yields empty findings.
inline std::optional<Sections> extract_sections(std::string_view raw) {
  const auto imp = detail::find_marker(raw, kImpressionMarker);
  if (!imp) return std::nullopt;
  const auto fnd = detail::find_marker(raw, kFindingsMarker);

  const std::size_t imp_begin = *imp + kImpressionMarker.size();
  std::size_t imp_end = raw.size();
  if (fnd && *fnd > *imp) imp_end = *fnd;

  Sections out;
  out.impression = text::normalize_whitespace(raw.substr(imp_begin, imp_end - imp_begin));
  if (out.impression.empty()) return std::nullopt;
  if (fnd) {
    const std::size_t f_begin = *fnd + kFindingsMarker.size();
    const std::size_t f_end = *fnd < *imp ? *imp : raw.size();
    out.findings = text::normalize_whitespace(raw.substr(f_begin, f_end - f_begin));
  }
  return out;
}

// The exact text shown to raters and indexed by edit spans.
inline std::string render_sections(const Sections& s) {
  std::string out;
  if (!s.findings.empty()) {
    out += kFindingsMarker;
    out += ' ';
    out += s.findings;
    out += "\n\n";
  }
  out += kImpressionMarker;
  out += ' ';
  out += s.impression;
  return out;
}

// One report. The token cache always equals tokenize(findings ++ " " ++
// impression); the sections can only change through set_sections.
class ReportDocument {
 public:
  ReportDocument() = default;
  ReportDocument(std::string report_id, std::string case_id, Sections sections,
                 ReportSource source)
      : report_id_(std::move(report_id)),
        case_id_(std::move(case_id)),
        sections_(std::move(sections)),
        source_(source) {
    refresh();
  }

  const std::string& report_id() const { return report_id_; }
  const std::string& case_id() const { return case_id_; }
  const std::string& findings() const { return sections_.findings; }
  const std::string& impression() const { return sections_.impression; }
  const Sections& sections() const { return sections_; }
  ReportSource source() const { return source_; }
  const TokenSequence& tokens() const { return tokens_; }

  // findings and impression joined by a single space.
  std::string full_text() const {
    if (sections_.findings.empty()) return sections_.impression;
    return sections_.findings + " " + sections_.impression;
  }
  std::string display_text() const { return render_sections(sections_); }

  void set_sections(Sections s) {
    sections_ = std::move(s);
    refresh();
  }
  void set_source(ReportSource s) { source_ = s; }
  void set_report_id(std::string id) { report_id_ = std::move(id); }

  bool operator==(const ReportDocument&) const = default;

 private:
  void refresh() { tokens_ = tokenize(full_text()); }

  std::string report_id_;
  std::string case_id_;
  Sections sections_;
  ReportSource source_ = ReportSource::kHumanOriginal;
  TokenSequence tokens_;
};

}  // namespace radeval
