#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "radeval/decoder.hpp"
#include "radeval/model_protocol.hpp"
#include "radeval/toy_model.hpp"
#include "toy_models.hpp"

namespace radeval {
namespace {

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

TEST(DecodeConfig, Defaults) {
  const DecodeConfig c;
  EXPECT_EQ(c.beam_width, 3u);
  EXPECT_DOUBLE_EQ(c.nucleus_p, 0.9);
  EXPECT_EQ(c.n_samples, 250u);
  EXPECT_FALSE(c.length_normalize);
}

TEST(SequenceLikelihood, SumsStepsIncludingEos) {
  const auto m = ToyModel::markov({"a", "b"}, {{"<s>", {{"a", 0.5}, {"b", 0.25}, {"</s>", 0.25}}},
                                               {"a", {{"a", 0.1}, {"b", 0.1}, {"</s>", 0.8}}},
                                               {"b", {{"</s>", 1.0}}}});
  EXPECT_NEAR(sequence_log_likelihood(m, "", {"a"}), std::log(0.5) + std::log(0.8), 1e-12);
  EXPECT_NEAR(sequence_log_likelihood(m, "", {}), std::log(0.25), 1e-12);
  EXPECT_EQ(sequence_log_likelihood(m, "", {"b", "a"}), kNegInf);
}

TEST(SequenceLikelihood, OutOfVocabularyThrows) {
  const auto m = testing::random_markov(1, 3);
  try {
    sequence_log_likelihood(m, "", {"a", "zzz"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutOfVocabulary);
  }
}

TEST(BeamSearch, WidthOneIsGreedy) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto m = testing::random_markov(seed, 4);
    // Greedy choice per step; a token that reaches the length bound is
    // charged the forced EOS that closes it.
    TokenSequence greedy;
    double ll = 0;
    while (true) {
      const auto d = m.next_log_probs("", greedy);
      std::string best_token;
      double best = kNegInf;
      for (const auto& [t, lp] : d) {
        double score = lp;
        if (t != "</s>" && greedy.size() + 1 == 6) {
          auto next = greedy;
          next.push_back(t);
          score += log_prob_of(m.next_log_probs("", next), "</s>");
        }
        if (score > best) {
          best = score;
          best_token = t;
        }
      }
      ll += best;
      if (best_token == "</s>") break;
      greedy.push_back(best_token);
      if (greedy.size() == 6) break;
    }
    const auto h = beam_search(m, "", {.beam_width = 1, .max_length = 6});
    ASSERT_EQ(h.size(), 1u);
    EXPECT_EQ(h[0].tokens, greedy);
    EXPECT_NEAR(h[0].log_likelihood, ll, 1e-12);
  }
}

TEST(BeamSearch, ExhaustiveWidthFindsArgmax) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    for (std::size_t v : {2u, 3u, 4u}) {
      const std::size_t L = v == 4 ? 4 : 5;
      const auto m = testing::random_markov(seed * 10 + v, v);
      const auto want = testing::brute_force_argmax(m, L);
      const auto got = beam_search(m, "", {.beam_width = ipow(v, L), .max_length = L});
      ASSERT_FALSE(got.empty());
      EXPECT_EQ(got[0].tokens, want.tokens);
      EXPECT_NEAR(got[0].log_likelihood, want.log_likelihood, 1e-9);
    }
  }
}

TEST(BeamSearch, ScoresAreSortedAndRecomputable) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto m = testing::random_markov(seed, 4);
    const auto hs = beam_search(m, "", {.beam_width = 5, .max_length = 7});
    for (std::size_t i = 0; i < hs.size(); ++i) {
      EXPECT_NEAR(hs[i].log_likelihood, sequence_log_likelihood(m, "", hs[i].tokens), 1e-9);
      EXPECT_LE(hs[i].tokens.size(), 7u);
      if (i > 0) {
        EXPECT_GE(hs[i - 1].log_likelihood, hs[i].log_likelihood);
      }
    }
  }
}

TEST(BeamSearch, ForcedEosAtMaxLength) {
  // EOS is nearly impossible before the third token, so the best
  // hypothesis runs into the bound and is closed by the model's EOS step.
  using T = ToyModel::Transition;
  const double stay = std::log(1 - 1e-6), stop = std::log(1e-6);
  std::map<std::string, ToyModel::State> states = {
      {"s0", {{"a", T{stay, "s1"}}, {"</s>", T{stop, ""}}}},
      {"s1", {{"a", T{stay, "s2"}}, {"</s>", T{stop, ""}}}},
      {"s2", {{"a", T{stay, "s3"}}, {"</s>", T{stop, ""}}}},
      {"s3", {{"a", T{std::log(0.5), "s3"}}, {"</s>", T{std::log(0.5), ""}}}},
  };
  const ToyModel m({"a"}, "s0", states);
  const auto hs = beam_search(m, "", {.beam_width = 2, .max_length = 3});
  ASSERT_FALSE(hs.empty());
  EXPECT_EQ(hs[0].tokens, (TokenSequence{"a", "a", "a"}));
  EXPECT_NEAR(hs[0].log_likelihood, 3 * stay + std::log(0.5), 1e-12);
  for (const auto& h : hs) EXPECT_LE(h.tokens.size(), 3u);
}

TEST(BeamSearch, DeterministicTieBreak) {
  const auto m = ToyModel::markov({"x", "y"}, {{"<s>", {{"x", 0.4}, {"y", 0.4}, {"</s>", 0.2}}},
                                               {"x", {{"</s>", 1.0}}},
                                               {"y", {{"</s>", 1.0}}}});
  const auto hs = beam_search(m, "", {.beam_width = 2, .max_length = 4});
  ASSERT_EQ(hs.size(), 2u);
  EXPECT_EQ(hs[0].tokens, TokenSequence{"x"});
  EXPECT_EQ(hs[1].tokens, TokenSequence{"y"});
}

TEST(BeamSearch, InvalidConfigThrows) {
  const auto m = testing::random_markov(1, 2);
  EXPECT_THROW(beam_search(m, "", {.beam_width = 0}), Error);
  EXPECT_THROW(beam_search(m, "", {.max_length = 0}), Error);
}

TEST(BeamSearch, LengthNormalizedFlagRanksByMeanStep) {
  // One long likely sequence vs a short unlikely one.
  const auto m = ToyModel::markov({"a", "b"}, {{"<s>", {{"a", 0.6}, {"b", 0.1}, {"</s>", 0.3}}},
                                               {"a", {{"a", 0.9}, {"</s>", 0.1}}},
                                               {"b", {{"</s>", 1.0}}}});
  const auto raw = beam_search(m, "", {.beam_width = 4, .max_length = 6});
  const auto norm = beam_search(m, "", {.beam_width = 4, .max_length = 6, .length_normalize = true});
  EXPECT_EQ(raw[0].tokens, TokenSequence{});
  EXPECT_NE(norm[0].tokens, raw[0].tokens);
  for (const auto& h : norm) EXPECT_NEAR(h.log_likelihood, sequence_log_likelihood(m, "", h.tokens), 1e-9);
}

TEST(BeamSearch, ExhaustiveWidthDominatesNarrowerWidths) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto m = testing::random_markov(seed, 3);
    const double best = beam_search(m, "", {.beam_width = ipow(3, 4), .max_length = 4})[0].log_likelihood;
    for (std::size_t w = 1; w <= 8; ++w) {
      ASSERT_LE(beam_search(m, "", {.beam_width = w, .max_length = 4})[0].log_likelihood, best + 1e-12);
    }
  }
}

TEST(BeamSearch, WiderBeamCanLoseToNarrowerBeam) {
  // A known beam-search effect: the second beam's expansions displace the
  // continuation that greedy decoding follows.
  const auto m = testing::random_markov(65, 4);
  const auto w1 = beam_search(m, "", {.beam_width = 1, .max_length = 6})[0];
  const auto w2 = beam_search(m, "", {.beam_width = 2, .max_length = 6})[0];
  EXPECT_LT(w2.log_likelihood, w1.log_likelihood);
  const auto exact = testing::brute_force_argmax(m, 6);
  EXPECT_GE(exact.log_likelihood, w1.log_likelihood);
}

// ---------------------------------------------------------------------------
// nucleus

LogProbs dist_of(const std::map<std::string, double>& p) {
  LogProbs d;
  for (const auto& [t, q] : p) d[t] = std::log(q);
  return d;
}

TEST(Nucleus, TopThreeAtPointNine) {
  const auto n = nucleus(dist_of({{"a", 0.5}, {"b", 0.3}, {"c", 0.15}, {"d", 0.05}}), 0.9);
  EXPECT_EQ(n.tokens, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(n.probabilities.size(), 3u);
  EXPECT_NEAR(n.probabilities[0], 0.5 / 0.95, 1e-12);
  EXPECT_NEAR(n.probabilities[1], 0.3 / 0.95, 1e-12);
  EXPECT_NEAR(n.probabilities[2], 0.15 / 0.95, 1e-12);
}

TEST(Nucleus, ExactBoundaryIncludesCrossingToken) {
  const auto n = nucleus(dist_of({{"a", 0.5}, {"b", 0.4}, {"c", 0.1}}), 0.9);
  EXPECT_EQ(n.tokens.size(), 2u);
  EXPECT_EQ(nucleus(dist_of({{"a", 0.5}, {"b", 0.4}, {"c", 0.1}}), 0.5).tokens.size(), 1u);
}

TEST(Nucleus, InvalidP) {
  EXPECT_THROW(nucleus(dist_of({{"a", 1.0}}), 0.0), Error);
  EXPECT_THROW(nucleus(dist_of({{"a", 1.0}}), 1.5), Error);
}

TEST(Nucleus, FullPMatchesModelFrequencies) {
  const auto d = dist_of({{"a", 0.5}, {"b", 0.3}, {"c", 0.15}, {"d", 0.05}});
  Rng rng(123);
  std::map<std::string, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_step(d, 1.0, rng)];
  EXPECT_NEAR(counts["a"] / double(n), 0.5, 0.01);
  EXPECT_NEAR(counts["b"] / double(n), 0.3, 0.01);
  EXPECT_NEAR(counts["c"] / double(n), 0.15, 0.01);
  EXPECT_NEAR(counts["d"] / double(n), 0.05, 0.01);
}

TEST(NucleusSample, SeededReproducibleAndScored) {
  const auto m = testing::random_markov(77, 4);
  const DecodeConfig cfg{.nucleus_p = 0.8, .max_length = 10, .seed = 5};
  const auto a = nucleus_sample(m, "", cfg);
  EXPECT_EQ(a.tokens, nucleus_sample(m, "", cfg).tokens);
  EXPECT_EQ(a.log_likelihood, nucleus_sample(m, "", cfg).log_likelihood);
  EXPECT_NEAR(a.log_likelihood, sequence_log_likelihood(m, "", a.tokens), 1e-9);
}

// ---------------------------------------------------------------------------
// ensemble

TEST(Ensemble, AlwaysSameReport) {
  const auto m = testing::two_report_mixture(1.0 - 1e-15);
  const auto r = ensemble_condition_probabilities(m, "", {.n_samples = 20});
  EXPECT_EQ(r.probability(FindingCategory::kPleuralEffusion), 1.0);
  EXPECT_EQ(r.probability(FindingCategory::kCardiomegaly), 0.0);
}

TEST(Ensemble, MixtureMatchesCountedDraws) {
  const auto m = testing::two_report_mixture(0.7);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = ensemble_condition_probabilities(m, "", {.seed = seed});
    EXPECT_EQ(r.n_samples, 250u);
    // Every sample consumes four uniforms: the first picks the report.
    Rng rng(seed);
    std::size_t first = 0;
    for (int i = 0; i < 250; ++i) {
      first += uniform_unit(rng) < 0.7;
      for (int k = 0; k < 3; ++k) uniform_unit(rng);
    }
    EXPECT_EQ(r.positive_counts[index_of(FindingCategory::kPleuralEffusion)], first);
    EXPECT_EQ(r.positive_counts[index_of(FindingCategory::kCardiomegaly)], 250 - first);
    EXPECT_NEAR(r.probability(FindingCategory::kPleuralEffusion), 0.7, 0.06);
    EXPECT_NEAR(r.probability(FindingCategory::kCardiomegaly), 0.3, 0.06);
  }
}

TEST(Ensemble, ProbabilitiesAreMultiplesOfOneOverN) {
  const auto m = testing::two_report_mixture(0.4);
  const auto r = ensemble_condition_probabilities(m, "", {.n_samples = 37, .seed = 9});
  for (auto c : kAllCategories) {
    const double p = r.probability(c);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_NEAR(p * 37, std::round(p * 37), 1e-9);
  }
}

// ---------------------------------------------------------------------------
// toy model file and line protocol

TEST(ToyModel, JsonRoundTrip) {
  const auto m = testing::random_markov(3, 3);
  const auto back = ToyModel::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_EQ(back.next_log_probs("", TokenSequence{"a", "b"}), m.next_log_probs("", TokenSequence{"a", "b"}));
}

TEST(ToyModel, RejectsUnnormalizedState) {
  const auto j = nlohmann::json::parse(R"({"vocabulary":["a"],"initial":"s","states":{"s":{"a":{"logprob":-0.1,"next":"s"},"</s>":{"logprob":-0.1}}}})");
  EXPECT_THROW(ToyModel::from_json(j), Error);
}

TEST(ModelProtocol, LineServerAnswersByteForByte) {
  const auto m = testing::random_markov(4, 3);
  std::istringstream in(
      "{\"id\":1,\"context_id\":\"c\",\"prefix\":[\"a\"]}\n"
      "{\"op\":\"vocabulary\",\"id\":2}\n"
      "not json\n");
  std::ostringstream out;
  serve_model_lines(m, in, out);
  std::istringstream lines(out.str());
  std::string line;
  std::getline(lines, line);
  const auto r1 = nlohmann::json::parse(line);
  EXPECT_EQ(r1.at("id"), 1);
  for (const auto& [t, lp] : m.next_log_probs("c", TokenSequence{"a"})) {
    EXPECT_EQ(r1.at("logprobs").at(t).get<double>(), lp);
  }
  std::getline(lines, line);
  EXPECT_EQ(nlohmann::json::parse(line).at("vocabulary"), nlohmann::json(m.vocabulary()));
  std::getline(lines, line);
  EXPECT_TRUE(nlohmann::json::parse(line).contains("error"));
}

}  // namespace
}  // namespace radeval
