#pragma once

// Seeded generators for synthetic corpora. Each generator returns the file
// content together with a manifest of what it seeded, so tests can compare
// pipeline output against the manifest rather than against hand-counted
// constants.

#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/random.hpp"

namespace radeval::testing {

inline const std::vector<std::string>& normal_findings() {
  static const std::vector<std::string> k = {
      "The lungs are clear. No pleural effusion or pneumothorax. Heart size is normal.",
      "Heart size is normal. The lungs are clear without consolidation.",
      "No focal consolidation, pleural effusion or pneumothorax. Mediastinal contours are normal.",
  };
  return k;
}

inline const std::vector<std::string>& abnormal_findings() {
  static const std::vector<std::string> k = {
      "Moderate cardiomegaly. No pneumothorax.",
      "Small left pleural effusion with adjacent atelectasis.",
      "Right lower lobe consolidation concerning for pneumonia.",
      "Mild pulmonary edema. Heart size is normal.",
      "Left basilar atelectasis.",
  };
  return k;
}

inline const std::vector<std::string>& prior_reference_sentences() {
  static const std::vector<std::string> k = {
      "As compared to the previous radiograph, the patient has been intubated.",
      "The patient has been intubated since prior exam.",
      "Unchanged appearance of the chest.",
      "Interval improvement in aeration at the bases.",
  };
  return k;
}

struct TrainingCorpusManifest {
  std::string jsonl;
  std::set<std::string> prior_reference;
  std::set<std::string> lateral;
  std::set<std::string> no_impression;
  std::set<std::string> non_train;
  std::size_t normal_train = 0;
};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[static_cast<std::size_t>(uniform_index(rng, v.size()))];
}

// n cases; the first n_prior/n_lateral/n_no_impression TRAIN positions (in a
// shuffled order) carry exactly one defect each. About 70% of cases are
// TRAIN. Normal and abnormal reports alternate randomly.
inline TrainingCorpusManifest make_training_corpus(std::uint64_t seed, std::size_t n, std::size_t n_prior,
                                                   std::size_t n_lateral, std::size_t n_no_impression) {
  Rng rng(seed);
  TrainingCorpusManifest m;
  std::vector<std::size_t> train_slots;
  std::vector<bool> is_train(n);
  for (std::size_t i = 0; i < n; ++i) {
    is_train[i] = uniform_index(rng, 10) < 7;
    if (is_train[i]) train_slots.push_back(i);
  }
  shuffle(train_slots, rng);
  std::vector<int> defect(n, 0);  // 1 prior, 2 lateral, 3 no impression
  std::size_t k = 0;
  for (std::size_t j = 0; j < n_prior; ++j) defect[train_slots.at(k++)] = 1;
  for (std::size_t j = 0; j < n_lateral; ++j) defect[train_slots.at(k++)] = 2;
  for (std::size_t j = 0; j < n_no_impression; ++j) defect[train_slots.at(k++)] = 3;

  std::ostringstream out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "case-" + std::to_string(1000 + i);
    const bool abnormal = uniform_index(rng, 2) == 1;
    std::string findings = abnormal ? pick(abnormal_findings(), rng) : pick(normal_findings(), rng);
    std::string impression = abnormal ? "Findings as described above." : "No acute cardiopulmonary process.";
    std::string view = uniform_index(rng, 2) ? "PA" : "AP";
    const char* split = "TRAIN";
    if (!is_train[i]) {
      split = uniform_index(rng, 2) ? "TEST" : "VALIDATION";
      m.non_train.insert(id);
    }
    switch (defect[i]) {
      case 1:
        findings += " " + pick(prior_reference_sentences(), rng);
        m.prior_reference.insert(id);
        break;
      case 2:
        view = "LATERAL";
        m.lateral.insert(id);
        break;
      case 3:
        impression.clear();
        m.no_impression.insert(id);
        break;
      default:
        break;
    }
    if (is_train[i] && !abnormal && defect[i] == 0) ++m.normal_train;
    // Alternate between the structured and the raw report form.
    nlohmann::json report;
    if (i % 2 == 0) {
      report = {{"findings", findings}, {"impression", impression}};
    } else {
      std::string raw = "FINDINGS:\n  " + findings + "\n\n";
      if (!impression.empty()) raw += "IMPRESSION:  " + impression + "\n";
      report = {{"raw", raw}};
    }
    nlohmann::json rec = {{"case_id", id},
                          {"dataset_tag", i % 3 == 0 ? "INDIA" : "US"},
                          {"image_ref", "images/" + id + ".png"},
                          {"view", view},
                          {"split", split},
                          {"report", report},
                          {"source", "HUMAN_ORIGINAL"}};
    out << rec.dump() << '\n';
  }
  m.jsonl = out.str();
  return m;
}

struct DefectiveFile {
  std::string jsonl;
  std::size_t n_records = 0;
  std::set<std::size_t> defect_lines;
};

// n records with the listed defect kinds placed on random distinct lines.
// Kinds: "no_impression", "bad_json", "missing_case_id", "duplicate",
// "bad_view", "missing_report", "bad_split".
inline DefectiveFile make_defective_file(std::uint64_t seed, std::size_t n, const std::vector<std::string>& kinds) {
  Rng rng(seed);
  std::vector<std::size_t> lines(n);
  for (std::size_t i = 0; i < n; ++i) lines[i] = i + 1;
  // Line 1 stays clean so that "duplicate" always has an earlier original.
  auto chosen = sample_without_replacement(std::vector<std::size_t>(lines.begin() + 1, lines.end()), kinds.size(), rng);
  std::map<std::size_t, std::string> defect_at;
  for (std::size_t i = 0; i < kinds.size(); ++i) defect_at[chosen[i]] = kinds[i];
  DefectiveFile f;
  f.n_records = n;
  std::ostringstream out;
  for (std::size_t line = 1; line <= n; ++line) {
    nlohmann::json rec = {{"case_id", "c" + std::to_string(line)},
                          {"dataset_tag", "SYNTHETIC"},
                          {"image_ref", "img/" + std::to_string(line) + ".png"},
                          {"view", "PA"},
                          {"split", "TEST"},
                          {"report", {{"findings", pick(normal_findings(), rng)}, {"impression", "No acute process."}}}};
    const auto it = defect_at.find(line);
    if (it == defect_at.end()) {
      out << rec.dump() << '\n';
      continue;
    }
    f.defect_lines.insert(line);
    const auto& kind = it->second;
    if (kind == "bad_json") {
      out << "{\"case_id\": \"c" << line << "\", \"report\": \n";
      continue;
    }
    if (kind == "no_impression") rec["report"] = {{"raw", "FINDINGS: Lungs clear."}};
    if (kind == "missing_case_id") rec.erase("case_id");
    if (kind == "duplicate") rec["case_id"] = "c1";
    if (kind == "bad_view") rec["view"] = "OBLIQUE";
    if (kind == "missing_report") rec.erase("report");
    if (kind == "bad_split") rec["split"] = "HOLDOUT";
    out << rec.dump() << '\n';
  }
  f.jsonl = out.str();
  return f;
}

}  // namespace radeval::testing
