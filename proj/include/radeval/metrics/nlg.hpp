#pragma once

// Text-overlap metrics: corpus BLEU-4, ROUGE-L and CIDEr-D.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "radeval/error.hpp"
#include "radeval/text.hpp"

namespace radeval::metrics {

using NgramCounts = std::unordered_map<std::string, int>;

// n-grams of exactly order n, keyed by tokens joined with a single space.
inline NgramCounts ngram_counts(const TokenSequence& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += ' ';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// BLEU

struct BleuStats {
  std::array<long, 4> matches{};  // clipped
  std::array<long, 4> totals{};
  long candidate_length = 0;
  long reference_length = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (std::size_t n = 0; n < 4; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    candidate_length += o.candidate_length;
    reference_length += o.reference_length;
    return *this;
  }
};

inline BleuStats bleu_stats(const TokenSequence& candidate, const TokenSequence& reference) {
  BleuStats s;
  s.candidate_length = static_cast<long>(candidate.size());
  s.reference_length = static_cast<long>(reference.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    for (const auto& [gram, count] : cand) {
      const auto it = ref.find(gram);
      if (it != ref.end()) s.matches[n - 1] += std::min(count, it->second);
      s.totals[n - 1] += count;
    }
  }
  return s;
}

// Geometric mean of the four modified precisions times the brevity penalty.
// With `smooth`, orders 2..4 use add-one smoothing (for sentence-level use).
inline double bleu_from_stats(const BleuStats& s, bool smooth = false) {
  if (s.candidate_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double num = static_cast<double>(s.matches[n]);
    double den = static_cast<double>(s.totals[n]);
    if (smooth && n > 0) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double c = static_cast<double>(s.candidate_length);
  const double r = static_cast<double>(s.reference_length);
  const double log_bp = c > r ? 0.0 : 1.0 - r / c;
  return std::exp(log_sum / 4.0 + log_bp);
}

// Unsmoothed corpus-level BLEU-4, one reference per candidate.
inline double bleu4(std::span<const TokenSequence> candidates,
                    std::span<const TokenSequence> references, bool smooth = false) {
  if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "bleu4: empty corpus");
  if (candidates.size() != references.size()) {
    throw Error(ErrorCode::kInvalidArgument, "bleu4: candidate/reference count mismatch");
  }
  BleuStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += bleu_stats(candidates[i], references[i]);
  return bleu_from_stats(total, smooth);
}

inline double sentence_bleu(const TokenSequence& candidate, const TokenSequence& reference) {
  return bleu_from_stats(bleu_stats(candidate, reference), true);
}

// ---------------------------------------------------------------------------
// ROUGE-L

inline constexpr double kRougeBeta = 1.2;

inline std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS F-measure with recall weighted by beta = 1.2. Zero if either side is
// empty.
inline double rouge_l(const TokenSequence& candidate, const TokenSequence& reference,
                      double beta = kRougeBeta) {
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

inline double rouge_l(std::span<const TokenSequence> candidates,
                      std::span<const TokenSequence> references, double beta = kRougeBeta) {
  if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "rouge_l: empty corpus");
  if (candidates.size() != references.size()) {
    throw Error(ErrorCode::kInvalidArgument, "rouge_l: candidate/reference count mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l(candidates[i], references[i], beta);
  return sum / static_cast<double>(candidates.size());
}

// ---------------------------------------------------------------------------
// CIDEr-D

// Consensus-based score with n = 1..4, Gaussian length penalty sigma = 6,
// clipped tf-idf products and a x10 scale. Document frequencies come from
// a corpus of reference sets fixed at construction.
class CiderD {
 public:
  static constexpr std::size_t kMaxOrder = 4;
  static constexpr double kSigma = 6.0;
  static constexpr double kScale = 10.0;

  explicit CiderD(std::span<const std::vector<TokenSequence>> df_corpus) {
    if (df_corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "cider_d: empty corpus");
    for (const auto& refs : df_corpus) {
      std::unordered_map<std::string, bool> seen;
      for (const auto& ref : refs) {
        for (std::size_t n = 1; n <= kMaxOrder; ++n) {
          for (const auto& [gram, count] : ngram_counts(ref, n)) seen[gram] = true;
        }
      }
      for (const auto& [gram, unused] : seen) ++document_frequency_[gram];
    }
    log_corpus_size_ = std::log(static_cast<double>(df_corpus.size()));
  }

  double score(const TokenSequence& candidate, std::span<const TokenSequence> references) const {
    if (references.empty()) return 0.0;
    const auto hyp = vectorize(candidate);
    std::array<double, kMaxOrder> total{};
    for (const auto& ref_tokens : references) {
      const auto ref = vectorize(ref_tokens);
      const double delta = hyp.length - ref.length;
      const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
      for (std::size_t n = 0; n < kMaxOrder; ++n) {
        double val = 0.0;
        for (const auto& [gram, h] : hyp.vec[n]) {
          const auto it = ref.vec[n].find(gram);
          if (it != ref.vec[n].end()) val += std::min(h, it->second) * it->second;
        }
        if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
        total[n] += val * penalty;
      }
    }
    double mean = 0.0;
    for (double v : total) mean += v;
    mean /= static_cast<double>(kMaxOrder);
    return mean / static_cast<double>(references.size()) * kScale;
  }

  // Mean over candidates.
  double score(std::span<const TokenSequence> candidates,
               std::span<const std::vector<TokenSequence>> references) const {
    if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "cider_d: empty corpus");
    if (candidates.size() != references.size()) {
      throw Error(ErrorCode::kInvalidArgument, "cider_d: candidate/reference count mismatch");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) sum += score(candidates[i], references[i]);
    return sum / static_cast<double>(candidates.size());
  }

  double document_frequency(const std::string& gram) const {
    const auto it = document_frequency_.find(gram);
    return it == document_frequency_.end() ? 0.0 : it->second;
  }

 private:
  struct Vec {
    std::array<std::unordered_map<std::string, double>, kMaxOrder> vec;
    std::array<double, kMaxOrder> norm{};
    double length = 0.0;  // bigram count, as in the reference scorer
  };

  Vec vectorize(const TokenSequence& tokens) const {
    Vec v;
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      for (const auto& [gram, tf] : ngram_counts(tokens, n)) {
        const double df = std::log(std::max(1.0, document_frequency(gram)));
        const double w = static_cast<double>(tf) * (log_corpus_size_ - df);
        v.vec[n - 1][gram] = w;
        v.norm[n - 1] += w * w;
        if (n == 2) v.length += tf;
      }
    }
    for (double& x : v.norm) x = std::sqrt(x);
    return v;
  }

  std::unordered_map<std::string, double> document_frequency_;
  double log_corpus_size_ = 0.0;
};

// Document frequencies taken from the references themselves.
inline double cider_d(std::span<const TokenSequence> candidates,
                      std::span<const std::vector<TokenSequence>> references) {
  return CiderD(references).score(candidates, references);
}

inline double cider_d(std::span<const TokenSequence> candidates,
                      std::span<const std::vector<TokenSequence>> references,
                      std::span<const std::vector<TokenSequence>> df_corpus) {
  return CiderD(df_corpus).score(candidates, references);
}

}  // namespace radeval::metrics
