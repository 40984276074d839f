// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nlg_fixtures.hpp"
#include "oracles.hpp"
#include "radeval/analysis.hpp"
#include "radeval/corpus.hpp"
#include "radeval/decoder.hpp"
#include "radeval/metrics.hpp"
#include "study_builder.hpp"
#include "synthetic.hpp"
#include "toy_models.hpp"
#include "workflow_fuzz.hpp"

namespace {

using namespace radeval;
namespace an = radeval::analysis;
namespace wf = radeval::workflow;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && pass) {
      pass = false;
      detail = what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

// ---------------------------------------------------------------------------

Outcome decoder_vs_brute_force() {
  Outcome o;
  const auto t0 = Clock::now();
  std::size_t models = 0;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    for (std::size_t v = 2; v <= 4; ++v) {
      for (std::size_t len = 1; len <= 5; ++len) {
        const auto m = testing::random_markov(1000 + seed * 31 + v * 7 + len, v);
        const auto want = testing::brute_force_argmax(m, len);
        const auto got = beam_search(m, "", {.beam_width = ipow(v, len), .max_length = len});
        o.require(!got.empty() && got[0].tokens == want.tokens, "argmax differs from exhaustive enumeration");
        for (const auto& h : got) {
          o.require(std::abs(h.log_likelihood - sequence_log_likelihood(m, "", h.tokens)) <= 1e-9,
                    "reported log-likelihood differs from sequence_log_likelihood");
        }
        o.require(std::abs(got[0].log_likelihood - want.log_likelihood) <= 1e-9, "argmax score differs");
        ++models;
      }
    }
  }
  const double s = seconds_since(t0);
  o.require(s < 5.0, "runtime " + fmt("%.2f", s) + " s exceeds 5 s");
  if (o.pass) o.detail = std::to_string(models) + " models, " + fmt("%.2f", s) + " s";
  return o;
}

Outcome nucleus_statistics() {
  Outcome o;
  const std::map<std::string, double> p = {{"a", 0.5}, {"b", 0.3}, {"c", 0.15}, {"d", 0.05}};
  LogProbs d;
  for (const auto& [t, q] : p) d[t] = std::log(q);
  double worst = 0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    std::map<std::string, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[sample_step(d, 1.0, rng)];
    for (const auto& [t, q] : p) worst = std::max(worst, std::abs(counts[t] / double(n) - q));
  }
  o.require(worst <= 0.01, "frequency deviation " + fmt("%.4f", worst) + " exceeds 0.01");
  const auto n = nucleus(d, 0.9);
  const std::set<std::string> top(n.tokens.begin(), n.tokens.end());
  o.require(top == std::set<std::string>{"a", "b", "c"}, "nucleus at p=0.9 is not the top-3 set");
  if (o.pass) o.detail = "max deviation " + fmt("%.4f", worst) + ", nucleus {a,b,c}";
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(2024);

  int tau = 0;
  while (tau < 100) {
    const auto n = 2 + uniform_index(rng, 80);
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = static_cast<double>(uniform_index(rng, 6));
    for (auto& x : b) x = static_cast<double>(uniform_index(rng, 5)) / 4.0;
    const auto varies = [](const std::vector<double>& v) {
      return std::any_of(v.begin(), v.end(), [&](double x) { return x != v[0]; });
    };
    if (!varies(a) || !varies(b)) continue;
    o.require(std::abs(metrics::kendall_tau_b(a, b) - oracle::kendall_pairs(a, b)) <= 1e-12, "kendall_tau_b");
    ++tau;
  }

  for (int i = 0; i < 1000; ++i) {
    auto tokens = [&] {
      TokenSequence t(uniform_index(rng, 41));
      for (auto& w : t) w = "w" + std::to_string(uniform_index(rng, 8));
      return t;
    };
    const auto a = tokens(), b = tokens();
    o.require(metrics::lcs_length(a, b) == oracle::lcs_table(a, b), "rouge_l LCS");
  }

  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 1 + uniform_index(rng, 50);
    std::vector<std::vector<int>> pb, gb;
    std::vector<LabelVector> p, g;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::vector<int> x(kNumCategories), y(kNumCategories);
      LabelVector lx, ly;
      for (std::size_t j = 0; j < kNumCategories; ++j) {
        x[j] = uniform_index(rng, 3) == 0;
        y[j] = uniform_index(rng, 3) == 0;
        if (x[j]) lx[kAllCategories[j]] = LabelValue::kPositive;
        if (y[j]) ly[kAllCategories[j]] = LabelValue::kPositive;
      }
      pb.push_back(x);
      gb.push_back(y);
      p.push_back(lx);
      g.push_back(ly);
    }
    o.require(std::abs(metrics::micro_f1_all(p, g).f1 - oracle::micro_f1_counts(pb, gb)) <= 1e-12, "micro_f1");
  }

  std::vector<TokenSequence> c, r;
  for (const auto& [cand, ref] : fixtures::bleu_pairs()) {
    c.push_back(tokenize(cand));
    r.push_back(tokenize(ref));
  }
  const double bleu = metrics::bleu4(c, r);
  o.require(std::round(bleu * 1e6) == std::round(fixtures::kBleu4 * 1e6), "bleu4 " + fmt("%.8f", bleu));
  std::vector<TokenSequence> cands;
  std::vector<std::vector<TokenSequence>> refs;
  for (const auto& d : fixtures::cider_docs()) {
    cands.push_back(tokenize(d.candidate));
    std::vector<TokenSequence> rs;
    for (const auto& s : d.references) rs.push_back(tokenize(s));
    refs.push_back(rs);
  }
  const double cider = metrics::cider_d(cands, refs);
  o.require(std::round(cider * 1e6) == std::round(fixtures::kCiderD * 1e6), "cider_d " + fmt("%.8f", cider));

  const double s = seconds_since(t0);
  o.require(s < 30.0, "runtime " + fmt("%.2f", s) + " s exceeds 30 s");
  if (o.pass) {
    o.detail = "bleu4 " + fmt("%.6f", bleu) + ", cider_d " + fmt("%.6f", cider) + ", " + fmt("%.2f", s) + " s";
  }
  return o;
}

// ---------------------------------------------------------------------------

const an::ErrorGroup* find_group(const std::vector<an::ErrorGroup>& gs, const std::string& dataset,
                                 const std::string& stratum) {
  for (const auto& g : gs) {
    if (g.dataset == dataset && g.stratum == stratum && g.source == "MODEL_GENERATED") return &g;
  }
  return nullptr;
}

Outcome pipeline_arithmetic() {
  Outcome o;
  an::AnalysisOptions no_ci;
  no_ci.n_resamples = 0;
  using testing::errors;

  {
    // 100 assessments: 9 with one significant error, 3 with one minor error.
    testing::StudyBuilder b;
    for (int i = 0; i < 50; ++i) {
      const auto c = b.add_case(DatasetTag::kUs, Stratum::kAbnormal);
      for (std::size_t r = 0; r < 2; ++r) {
        const int k = 2 * i + static_cast<int>(r);
        testing::ErrorSpec e;
        if (k < 9) e = errors(1, true);
        else if (k < 12) e = errors(1, false);
        b.correct(c, ReportSource::kModelGenerated, r, e);
      }
    }
    const auto* g = find_group(an::error_rate_summary(b.state(), no_ci), "US", "ABNORMAL");
    o.require(g && g->mean_errors.point == 0.12, "mean errors is not 0.12");
    o.require(g && g->mean_significant.point == 0.09, "mean significant errors is not 0.09");
  }
  {
    // 1000 assessments, 199 with at least one significant error.
    testing::StudyBuilder b;
    for (int i = 0; i < 500; ++i) {
      const auto c = b.add_case(DatasetTag::kUs, i % 2 ? Stratum::kNormal : Stratum::kAbnormal);
      for (std::size_t r = 0; r < 2; ++r) {
        const int k = 2 * i + static_cast<int>(r);
        testing::ErrorSpec e;
        if (k < 199) e = errors(1 + k % 3, true);
        else if (k < 300) e = errors(1 + k % 2, false);
        b.correct(c, ReportSource::kModelGenerated, r, e);
      }
    }
    const auto* g = find_group(an::error_rate_summary(b.state(), no_ci), "US", "ALL");
    o.require(g && g->fraction_with_significant.point == 0.199, "significant fraction is not 19.9%");
    an::Results res;
    if (g) res.errors = {*g};
    std::ostringstream csv;
    an::write_long_csv(csv, res);
    o.require(csv.str().find("fraction_with_significant,percent,19.9,") != std::string::npos,
              "long.csv does not report 19.9");
  }
  {
    // 41 errors over 100 assessments: 27 finding, 8 location, 6 severity.
    testing::StudyBuilder b;
    std::vector<wf::ErrorReason> pool;
    pool.insert(pool.end(), 27, wf::ErrorReason::kIncorrectFinding);
    pool.insert(pool.end(), 8, wf::ErrorReason::kIncorrectLocation);
    pool.insert(pool.end(), 6, wf::ErrorReason::kIncorrectSeverity);
    Rng rng(5);
    shuffle(pool, rng);
    std::size_t next = 0;
    for (int i = 0; i < 50; ++i) {
      const auto c = b.add_case(DatasetTag::kIndia, Stratum::kAbnormal);
      for (std::size_t r = 0; r < 2; ++r) {
        testing::ErrorSpec e;
        for (int k = 0; k < 2 && next < pool.size(); ++k) e.push_back({pool[next++], k == 0});
        b.correct(c, ReportSource::kModelGenerated, r, e);
      }
    }
    bool found = false;
    for (const auto& g : an::error_type_distribution(b.state(), no_ci)) {
      if (g.dataset != "INDIA" || g.stratum != "ABNORMAL" || g.source != "MODEL_GENERATED") continue;
      found = true;
      o.require(g.mean[0].point == 0.27 && g.mean[1].point == 0.08 && g.mean[2].point == 0.06,
                "per-reason means are not 0.27/0.08/0.06");
    }
    o.require(found, "no INDIA reason group");
  }
  {
    // Significant-error case sets: US 40/33/27, INDIA 45/34/21 (only/only/both).
    testing::StudyBuilder b;
    auto add = [&](DatasetTag d, int cand_only, int orig_only, int both, int clean) {
      auto one = [&](bool cand, bool orig) {
        const auto c = b.add_case(d, Stratum::kAbnormal);
        b.correct(c, ReportSource::kModelGenerated, 0, errors(cand ? 1 : 0, true));
        b.correct(c, ReportSource::kHumanOriginal, 1, errors(orig ? 2 : 0, true));
      };
      for (int i = 0; i < cand_only; ++i) one(true, false);
      for (int i = 0; i < orig_only; ++i) one(false, true);
      for (int i = 0; i < both; ++i) one(true, true);
      for (int i = 0; i < clean; ++i) one(false, false);
    };
    add(DatasetTag::kUs, 40, 33, 27, 50);
    add(DatasetTag::kIndia, 45, 34, 21, 80);
    std::map<std::string, double> frac;
    for (const auto& g : an::overlap_analysis(b.state())) frac[g.dataset] = g.significant_non_overlap_fraction;
    o.require(frac["US"] == 0.73, "US non-overlap is not 73%");
    o.require(frac["INDIA"] == 0.79, "INDIA non-overlap is not 79%");
  }
  if (o.pass) o.detail = "0.12/0.09, 19.9%, 0.27/0.08/0.06, 73%/79% exact";
  return o;
}

Outcome workflow_invariants() {
  Outcome o;
  const auto dir = std::filesystem::temp_directory_path() / "radeval-acceptance";
  std::filesystem::create_directories(dir);
  std::size_t ops = 0;
  const auto t0 = Clock::now();
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    testing::FuzzConfig cfg;
    cfg.seed = seed;
    cfg.target_operations = 10000;
    cfg.log_path = (dir / ("fuzz-" + std::to_string(seed) + ".log")).string();
    std::filesystem::remove(cfg.log_path);
    const auto rep = testing::run_workflow_fuzz(cfg);
    o.require(rep.ok(), "seed " + std::to_string(seed) + ": " + (rep.ok() ? "" : rep.violations.front()));
    o.require(rep.operations >= 10000, "seed " + std::to_string(seed) + " ran fewer than 10000 operations");
    ops += rep.operations;
    std::filesystem::remove(cfg.log_path);
  }
  if (o.pass) o.detail = std::to_string(ops) + " operations on 3 seeds, " + fmt("%.1f", seconds_since(t0)) + " s";
  return o;
}

Outcome preprocessing() {
  Outcome o;
  const auto m = testing::make_training_corpus(500, 500, 60, 20, 15);
  std::istringstream in(m.jsonl);
  const auto ingested = ingest_jsonl(in);

  std::vector<std::string> lines;
  std::istringstream split(m.jsonl);
  for (std::string l; std::getline(split, l);) lines.push_back(l);
  std::set<std::string> no_impression;
  for (const auto& r : ingested.rejections) {
    no_impression.insert(nlohmann::json::parse(lines.at(r.line - 1)).at("case_id").get<std::string>());
  }
  const auto filtered = filter_training_set(ingested.corpus);
  std::set<std::string> prior, lateral;
  for (const auto& r : filtered.removed) {
    if (r.reason == RemovalReason::kPriorReference) prior.insert(r.case_id);
    if (r.reason == RemovalReason::kLateralView) lateral.insert(r.case_id);
    if (r.reason == RemovalReason::kNoImpression) no_impression.insert(r.case_id);
  }
  o.require(prior == m.prior_reference, "prior-reference removals differ from the manifest");
  o.require(lateral == m.lateral, "lateral removals differ from the manifest");
  o.require(no_impression == m.no_impression, "no-impression removals differ from the manifest");
  o.require(filtered.corpus.size() == 500 - 60 - 20 - 15, "filtered corpus size");

  const auto weights = compute_example_weights(derive_strata(filtered.corpus));
  double worst = 0;
  for (auto tag : {DatasetTag::kUs, DatasetTag::kIndia}) {
    double normal = 0, abnormal = 0;
    for (const auto& w : weights) {
      if (w.dataset_tag == tag) (w.stratum == Stratum::kNormal ? normal : abnormal) += w.weight;
    }
    worst = std::max(worst, std::abs(normal - abnormal));
  }
  o.require(worst <= 1e-9, "stratum mass imbalance " + fmt("%.3g", worst));

  const auto& lex = default_prior_reference_lexicon();
  for (const char* phrase : {"As compared to the previous radiograph", "since prior exam"}) {
    const ReportDocument r("r", "c", {std::string(phrase) + ", the lungs are clear.", "No acute process."},
                           ReportSource::kHumanOriginal);
    o.require(detect_prior_reference(r, lex), std::string("phrase not detected: ") + phrase);
  }
  if (o.pass) {
    o.detail = std::to_string(prior.size()) + " prior, " + std::to_string(lateral.size()) + " lateral, " +
               std::to_string(no_impression.size()) + " no-impression; imbalance " + fmt("%.2g", worst);
  }
  return o;
}

Outcome roc_ensemble() {
  Outcome o;
  o.require(DecodeConfig{}.n_samples == 250, "default n_samples is not 250");
  const auto m = testing::two_report_mixture(0.7);
  double worst = 0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const auto r = ensemble_condition_probabilities(m, "", {.n_samples = 250, .seed = seed});
    // Each sample draws four uniforms; the first one picks the report.
    Rng rng(seed);
    std::size_t first = 0;
    for (int i = 0; i < 250; ++i) {
      first += uniform_unit(rng) < 0.7;
      for (int k = 0; k < 3; ++k) uniform_unit(rng);
    }
    o.require(r.positive_counts[index_of(FindingCategory::kPleuralEffusion)] == first &&
                  r.positive_counts[index_of(FindingCategory::kCardiomegaly)] == 250 - first,
              "counts differ from the counted-draws oracle at seed " + std::to_string(seed));
    worst = std::max({worst, std::abs(r.probability(FindingCategory::kPleuralEffusion) - 0.7),
                      std::abs(r.probability(FindingCategory::kCardiomegaly) - 0.3)});
  }
  o.require(worst <= 0.06, "probability deviation " + fmt("%.3f", worst) + " exceeds 0.06");
  if (o.pass) o.detail = "max deviation " + fmt("%.3f", worst) + " over 5 seeds";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"decoder_vs_brute_force", decoder_vs_brute_force},
      {"nucleus_statistics", nucleus_statistics},
      {"metric_oracles", metric_oracles},
      {"pipeline_arithmetic", pipeline_arithmetic},
      {"workflow_invariants", workflow_invariants},
      {"preprocessing", preprocessing},
      {"roc_ensemble", roc_ensemble},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed;
}
