#pragma once

// Autoregressive decoding over a pluggable conditional token model:
// sequence scoring, beam search, nucleus sampling and the sampling
// ensemble used for condition probabilities.
//
// Conventions:
//  * a hypothesis' tokens never include the end-of-sequence token, but its
//    log-likelihood always includes the EOS step;
//  * max_length bounds the number of content tokens; a hypothesis that
//    reaches it is closed with the model's EOS log-probability;
//  * ties are broken by lexicographic token order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "radeval/error.hpp"
#include "radeval/labeler.hpp"
#include "radeval/random.hpp"
#include "radeval/text.hpp"

namespace radeval {

inline constexpr std::string_view kEndOfSequence = "</s>";
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Next-token log-probabilities keyed by token, EOS included. A token that
// is absent has probability zero.
using LogProbs = std::map<std::string, double>;

inline double log_prob_of(const LogProbs& d, const std::string& token) {
  const auto it = d.find(token);
  return it == d.end() ? kNegInf : it->second;
}

class ConditionalTokenModel {
 public:
  virtual ~ConditionalTokenModel() = default;

  // Content tokens, excluding EOS.
  virtual const std::vector<std::string>& vocabulary() const = 0;

  virtual LogProbs next_log_probs(std::string_view context,
                                  std::span<const std::string> prefix) const = 0;

  // Results are returned in request order. Implementations may evaluate the
  // prefixes concurrently.
  virtual std::vector<LogProbs> next_log_probs_batch(std::string_view context,
                                                     std::span<const TokenSequence> prefixes) const {
    std::vector<LogProbs> out;
    out.reserve(prefixes.size());
    for (const auto& p : prefixes) out.push_back(next_log_probs(context, p));
    return out;
  }

  bool in_vocabulary(const std::string& token) const {
    const auto& v = vocabulary();
    return std::find(v.begin(), v.end(), token) != v.end();
  }
};

struct DecodeConfig {
  std::size_t beam_width = 3;
  double nucleus_p = 0.9;
  std::size_t max_length = 128;
  std::size_t n_samples = 250;
  std::uint64_t seed = 0;
  bool length_normalize = false;
};

struct Hypothesis {
  TokenSequence tokens;
  double log_likelihood = 0.0;
  bool operator==(const Hypothesis&) const = default;
};

// Sum of stepwise log-probabilities, including the final EOS step.
inline double sequence_log_likelihood(const ConditionalTokenModel& model, std::string_view context,
                                      const TokenSequence& tokens) {
  for (const auto& t : tokens) {
    if (!model.in_vocabulary(t)) {
      throw Error(ErrorCode::kOutOfVocabulary, "token '" + t + "' is not in the model vocabulary", "tokens");
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i <= tokens.size(); ++i) {
    const auto dist = model.next_log_probs(context, std::span<const std::string>(tokens.data(), i));
    total += log_prob_of(dist, i < tokens.size() ? tokens[i] : std::string(kEndOfSequence));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Beam search

namespace detail {

struct BeamCandidate {
  TokenSequence tokens;
  double score = 0.0;
  bool finished = false;
};

inline double ranking_key(const BeamCandidate& c, bool normalize) {
  if (!normalize) return c.score;
  const double len = static_cast<double>(c.tokens.size() + (c.finished ? 1 : 0));
  return c.score / std::max(1.0, len);
}

inline bool beam_before(const BeamCandidate& a, const BeamCandidate& b, bool normalize) {
  const double ka = ranking_key(a, normalize), kb = ranking_key(b, normalize);
  if (ka != kb) return ka > kb;
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  return a.finished && !b.finished;
}

}  // namespace detail

// Length-bounded beam search. Every step ranks all expansions of the active
// beam (EOS included) and keeps the best beam_width; expansions ending in
// EOS leave the beam for a completed pool capped at beam_width. The search
// stops when the beam empties, or when the pool is full and its worst score
// beats the best active score (sound because scores never increase).
inline std::vector<Hypothesis> beam_search(const ConditionalTokenModel& model, std::string_view context,
                                           const DecodeConfig& config) {
  if (config.beam_width == 0) throw Error(ErrorCode::kInvalidArgument, "beam_width must be >= 1", "beam_width");
  if (config.max_length == 0) throw Error(ErrorCode::kInvalidArgument, "max_length must be >= 1", "max_length");
  const bool norm = config.length_normalize;
  const std::string eos(kEndOfSequence);
  auto before = [norm](const detail::BeamCandidate& a, const detail::BeamCandidate& b) {
    return detail::beam_before(a, b, norm);
  };

  std::vector<detail::BeamCandidate> active{{{}, 0.0, false}};
  std::vector<detail::BeamCandidate> pool;
  while (!active.empty()) {
    std::vector<TokenSequence> prefixes;
    for (const auto& a : active) prefixes.push_back(a.tokens);
    const auto dists = model.next_log_probs_batch(context, prefixes);

    std::vector<detail::BeamCandidate> candidates;
    std::vector<detail::BeamCandidate> closing;  // reach max_length, need the EOS step
    for (std::size_t i = 0; i < active.size(); ++i) {
      for (const auto& [token, lp] : dists[i]) {
        if (lp == kNegInf) continue;
        if (token == eos) {
          candidates.push_back({active[i].tokens, active[i].score + lp, true});
          continue;
        }
        auto tokens = active[i].tokens;
        tokens.push_back(token);
        if (tokens.size() >= config.max_length) {
          closing.push_back({std::move(tokens), active[i].score + lp, true});
        } else {
          candidates.push_back({std::move(tokens), active[i].score + lp, false});
        }
      }
    }
    if (!closing.empty()) {
      std::vector<TokenSequence> closing_prefixes;
      for (const auto& c : closing) closing_prefixes.push_back(c.tokens);
      const auto eos_dists = model.next_log_probs_batch(context, closing_prefixes);
      for (std::size_t i = 0; i < closing.size(); ++i) {
        const double lp = log_prob_of(eos_dists[i], eos);
        if (lp == kNegInf) continue;
        closing[i].score += lp;
        candidates.push_back(std::move(closing[i]));
      }
    }

    const std::size_t keep = std::min(config.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), before);
    candidates.resize(keep);

    active.clear();
    for (auto& c : candidates) {
      if (c.finished) {
        pool.push_back(std::move(c));
      } else {
        active.push_back(std::move(c));
      }
    }
    std::sort(pool.begin(), pool.end(), before);
    if (pool.size() > config.beam_width) pool.resize(config.beam_width);

    if (!norm && pool.size() >= config.beam_width && !active.empty() &&
        pool.back().score > active.front().score) {
      break;
    }
  }

  std::vector<Hypothesis> out;
  for (auto& c : pool) out.push_back({std::move(c.tokens), c.score});
  return out;
}

// ---------------------------------------------------------------------------
// Nucleus sampling

struct Nucleus {
  std::vector<std::string> tokens;  // most probable first
  std::vector<double> probabilities;  // renormalized over the nucleus
};

// The smallest most-probable prefix of the distribution whose mass reaches
// p; the token that crosses the threshold is included.
inline Nucleus nucleus(const LogProbs& dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "nucleus_p must lie in (0, 1]", "nucleus_p");
  std::vector<std::pair<std::string, double>> items;
  for (const auto& [token, lp] : dist) {
    if (lp != kNegInf) items.emplace_back(token, std::exp(lp));
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Nucleus n;
  double mass = 0.0;
  for (const auto& [token, prob] : items) {
    n.tokens.push_back(token);
    n.probabilities.push_back(prob);
    mass += prob;
    if (mass >= p - 1e-12) break;
  }
  for (double& q : n.probabilities) q /= mass;
  return n;
}

inline std::string sample_step(const LogProbs& dist, double p, Rng& rng) {
  const auto n = nucleus(dist, p);
  if (n.tokens.empty()) throw Error(ErrorCode::kDegenerate, "model returned an empty distribution");
  const double u = uniform_unit(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < n.tokens.size(); ++i) {
    cum += n.probabilities[i];
    if (u < cum) return n.tokens[i];
  }
  return n.tokens.back();
}

// One report drawn with nucleus sampling from the caller's stream. The
// returned log-likelihood is under the unmodified model.
inline Hypothesis nucleus_sample(const ConditionalTokenModel& model, std::string_view context,
                                 const DecodeConfig& config, Rng& rng) {
  if (config.max_length == 0) throw Error(ErrorCode::kInvalidArgument, "max_length must be >= 1", "max_length");
  const std::string eos(kEndOfSequence);
  Hypothesis h;
  while (true) {
    const auto dist = model.next_log_probs(context, h.tokens);
    if (h.tokens.size() >= config.max_length) {
      h.log_likelihood += log_prob_of(dist, eos);
      return h;
    }
    auto token = sample_step(dist, config.nucleus_p, rng);
    h.log_likelihood += log_prob_of(dist, token);
    if (token == eos) return h;
    h.tokens.push_back(std::move(token));
  }
}

inline Hypothesis nucleus_sample(const ConditionalTokenModel& model, std::string_view context,
                                 const DecodeConfig& config) {
  Rng rng(config.seed);
  return nucleus_sample(model, context, config, rng);
}

// ---------------------------------------------------------------------------
// Sampling ensemble

struct EnsembleResult {
  std::size_t n_samples = 0;
  std::array<std::size_t, kNumCategories> positive_counts{};

  double probability(FindingCategory c) const {
    return static_cast<double>(positive_counts[index_of(c)]) / static_cast<double>(n_samples);
  }
};

// Draws n_samples reports from one stream seeded with config.seed, labels
// each, and counts per category how many were labelled POSITIVE.
inline EnsembleResult ensemble_condition_probabilities(const ConditionalTokenModel& model,
                                                       std::string_view context, const DecodeConfig& config,
                                                       const Lexicon& lexicon = default_lexicon()) {
  if (config.n_samples == 0) throw Error(ErrorCode::kInvalidArgument, "n_samples must be >= 1", "n_samples");
  Rng rng(config.seed);
  EnsembleResult r;
  r.n_samples = config.n_samples;
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    const auto h = nucleus_sample(model, context, config, rng);
    const auto labels = label_text(join(h.tokens), lexicon);
    for (auto c : kAllCategories) {
      if (labels[c] == LabelValue::kPositive) ++r.positive_counts[index_of(c)];
    }
  }
  return r;
}

}  // namespace radeval
