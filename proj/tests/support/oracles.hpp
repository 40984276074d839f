#pragma once

// Independent reference computations used by the tests. Each oracle is
// written the slow, obvious way and shares no code with the library path
// it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <vector>

namespace radeval::oracle {

// Two-regex section split.
struct RegexSections {
  std::string findings, impression;
};

inline std::string collapse(const std::string& s) {
  static const std::regex ws("\\s+");
  auto t = std::regex_replace(s, ws, " ");
  const auto b = t.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = t.find_last_not_of(' ');
  return t.substr(b, e - b + 1);
}

inline std::optional<RegexSections> regex_sections(const std::string& raw) {
  static const std::regex imp("(^|\\n)[ \\t\\r\\f\\v]*impression:([\\s\\S]*?)(?=\\n[ \\t\\r\\f\\v]*findings:|$)",
                              std::regex::icase | std::regex::ECMAScript);
  static const std::regex fnd("(^|\\n)[ \\t\\r\\f\\v]*findings:([\\s\\S]*?)(?=\\n[ \\t\\r\\f\\v]*impression:|$)",
                              std::regex::icase | std::regex::ECMAScript);
  std::smatch m;
  // ECMAScript '$' matches only at the very end without multiline, which is
  // what we want for "until the other marker or the end".
  if (!std::regex_search(raw, m, imp)) return std::nullopt;
  RegexSections s;
  s.impression = collapse(m[2].str());
  if (s.impression.empty()) return std::nullopt;
  if (std::regex_search(raw, m, fnd)) s.findings = collapse(m[2].str());
  return s;
}

inline std::vector<std::string> regex_tokenize(const std::string& s) {
  static const std::regex word("[A-Za-z0-9]+");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), word); it != std::sregex_iterator(); ++it) {
    std::string w = it->str();
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(w);
  }
  return out;
}

// O(n^2) pair counting with tie corrections.
inline double kendall_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  long long conc = 0, disc = 0, tie_a_only = 0, tie_b_only = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++tie_a_only;
      } else if (db == 0) {
        ++tie_b_only;
      } else if ((da > 0) == (db > 0)) {
        ++conc;
      } else {
        ++disc;
      }
    }
  }
  const double n1 = static_cast<double>(conc + disc + tie_b_only);  // pairs untied in a
  const double n2 = static_cast<double>(conc + disc + tie_a_only);  // pairs untied in b
  return static_cast<double>(conc - disc) / std::sqrt(n1 * n2);
}

// Full-table LCS.
inline std::size_t lcs_table(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = a.size(); i-- > 0;) {
    for (std::size_t j = b.size(); j-- > 0;) {
      t[i][j] = a[i] == b[j] ? 1 + t[i + 1][j + 1] : std::max(t[i + 1][j], t[i][j + 1]);
    }
  }
  return t[0][0];
}

// Percentile bootstrap of the mean, written independently: rejection
// sampling on raw mt19937_64 output, then numpy-style linear quantiles.
inline std::pair<double, double> resample_mean_ci(const std::vector<double>& v, std::size_t resamples,
                                                  double level, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  const std::uint64_t n = v.size();
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t reject_above = max - ((max % n) + 1) % n;
  std::vector<double> means;
  for (std::size_t r = 0; r < resamples; ++r) {
    double sum = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint64_t x;
      do {
        x = eng();
      } while (x > reject_above);
      sum += v[x % n];
    }
    means.push_back(sum / static_cast<double>(n));
  }
  std::sort(means.begin(), means.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double alpha = (1 - level) / 2;
  return {q(alpha), q(1 - alpha)};
}

// Micro F1 straight from 0/1 matrices: rows are reports, columns categories.
inline double micro_f1_counts(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gold) {
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < pred[i].size(); ++j) {
      tp += pred[i][j] && gold[i][j];
      fp += pred[i][j] && !gold[i][j];
      fn += !pred[i][j] && gold[i][j];
    }
  }
  return tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
}

// AUC as the Mann-Whitney probability that a positive outscores a negative,
// ties counting one half.
inline double mann_whitney_auc(const std::vector<double>& scores, const std::vector<int>& targets) {
  double wins = 0;
  long pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (targets[i] != 1) continue;
    ++pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (targets[j] != 0) continue;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  for (int t : targets) neg += t == 0;
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace radeval::oracle
