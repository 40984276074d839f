#pragma once

// A deterministic finite-state token model, the reference backend for
// decoder tests and `radeval decode-sim`.
//
// File format (JSON):
//   {
//     "vocabulary": ["large", "pleural", ...],
//     "initial": "s0",
//     "states": {
//       "s0": {"large": {"logprob": -0.36, "next": "s1"}, "</s>": {"logprob": -1.2}},
//       ...
//     }
//   }
// Each state's transition probabilities must sum to 1 within 1e-6. Tokens
// not listed have probability zero; EOS needs no "next".

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/decoder.hpp"
#include "radeval/error.hpp"

namespace radeval {

class ToyModel final : public ConditionalTokenModel {
 public:
  struct Transition {
    double log_prob = 0.0;
    std::string next;  // empty for EOS
  };
  using State = std::map<std::string, Transition>;

  ToyModel(std::vector<std::string> vocabulary, std::string initial, std::map<std::string, State> states)
      : vocabulary_(std::move(vocabulary)), initial_(std::move(initial)), states_(std::move(states)) {
    validate();
  }

  static ToyModel from_json(const nlohmann::json& j) {
    try {
      std::map<std::string, State> states;
      for (const auto& [name, transitions] : j.at("states").items()) {
        State s;
        for (const auto& [token, t] : transitions.items()) {
          s[token] = {t.at("logprob").get<double>(), t.value("next", std::string())};
        }
        states.emplace(name, std::move(s));
      }
      return ToyModel(j.at("vocabulary").get<std::vector<std::string>>(), j.at("initial").get<std::string>(),
                      std::move(states));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kSchema, std::string("toy model: ") + e.what());
    }
  }

  static ToyModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot read model file " + path, "model");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kSchema, "model file " + path + ": " + e.what(), "model");
    }
    return from_json(j);
  }

  // First-order Markov chain over tokens: the state is the previous token.
  // `table` maps "<s>" and each vocabulary token to next-token probabilities.
  static ToyModel markov(const std::vector<std::string>& vocabulary,
                         const std::map<std::string, std::map<std::string, double>>& table) {
    std::map<std::string, State> states;
    for (const auto& [from, row] : table) {
      State s;
      for (const auto& [token, p] : row) {
        if (p <= 0.0) continue;
        s[token] = {std::log(p), token == kEndOfSequence ? std::string() : token};
      }
      states.emplace(from, std::move(s));
    }
    return ToyModel(vocabulary, "<s>", std::move(states));
  }

  nlohmann::json to_json() const {
    nlohmann::json states = nlohmann::json::object();
    for (const auto& [name, s] : states_) {
      nlohmann::json row = nlohmann::json::object();
      for (const auto& [token, t] : s) {
        row[token] = {{"logprob", t.log_prob}};
        if (!t.next.empty()) row[token]["next"] = t.next;
      }
      states[name] = std::move(row);
    }
    return {{"vocabulary", vocabulary_}, {"initial", initial_}, {"states", std::move(states)}};
  }

  const std::vector<std::string>& vocabulary() const override { return vocabulary_; }

  LogProbs next_log_probs(std::string_view, std::span<const std::string> prefix) const override {
    const State* s = &states_.at(initial_);
    for (const auto& token : prefix) {
      const auto it = s->find(token);
      if (it == s->end() || it->second.next.empty()) return {};
      s = &states_.at(it->second.next);
    }
    LogProbs out;
    for (const auto& [token, t] : *s) out[token] = t.log_prob;
    return out;
  }

 private:
  void validate() const {
    if (!states_.count(initial_)) throw Error(ErrorCode::kSchema, "toy model: unknown initial state '" + initial_ + "'");
    for (const auto& [name, s] : states_) {
      double mass = 0.0;
      for (const auto& [token, t] : s) {
        if (token != kEndOfSequence) {
          if (std::find(vocabulary_.begin(), vocabulary_.end(), token) == vocabulary_.end()) {
            throw Error(ErrorCode::kSchema, "toy model: state '" + name + "' emits unknown token '" + token + "'");
          }
          if (!states_.count(t.next)) {
            throw Error(ErrorCode::kSchema, "toy model: state '" + name + "' moves to unknown state '" + t.next + "'");
          }
        }
        mass += std::exp(t.log_prob);
      }
      if (std::abs(mass - 1.0) > 1e-6) {
        throw Error(ErrorCode::kSchema, "toy model: probabilities of state '" + name + "' sum to " + std::to_string(mass));
      }
    }
  }

  std::vector<std::string> vocabulary_;
  std::string initial_;
  std::map<std::string, State> states_;
};

}  // namespace radeval
