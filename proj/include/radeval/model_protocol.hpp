#pragma once

// Line protocol for out-of-process report generators. One JSON object per
// line in each direction:
//
//   -> {"id": 7, "context_id": "case-1", "prefix": ["no", "acute"]}
//   <- {"id": 7, "logprobs": {"process": -0.1, "</s>": -2.3}}
//   -> {"id": 8, "op": "vocabulary"}
//   <- {"id": 8, "vocabulary": ["no", "acute", "process"]}
//
// Tokens with zero probability are omitted from "logprobs". Responses may
// arrive in any order; clients match them by id. Failures are answered with
// {"id": n, "error": "..."}.

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/decoder.hpp"
#include "radeval/error.hpp"

namespace radeval {

inline nlohmann::json answer_model_request(const ConditionalTokenModel& model, const nlohmann::json& req) {
  nlohmann::json resp = {{"id", req.value("id", nlohmann::json())}};
  try {
    if (req.value("op", std::string()) == "vocabulary") {
      resp["vocabulary"] = model.vocabulary();
      return resp;
    }
    const auto prefix = req.at("prefix").get<TokenSequence>();
    const auto dist = model.next_log_probs(req.value("context_id", std::string()), prefix);
    nlohmann::json lp = nlohmann::json::object();
    for (const auto& [token, v] : dist) {
      if (v != kNegInf) lp[token] = v;
    }
    resp["logprobs"] = std::move(lp);
  } catch (const std::exception& e) {
    resp["error"] = e.what();
  }
  return resp;
}

// Answers requests from `in` until end of input.
inline void serve_model_lines(const ConditionalTokenModel& model, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json resp;
    try {
      resp = answer_model_request(model, nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      resp = {{"id", nullptr}, {"error", e.what()}};
    }
    out << resp.dump() << '\n' << std::flush;
  }
}

// Client side: spawns `argv` and speaks the line protocol over its stdin
// and stdout. Calls are serialized.
class SubprocessModel final : public ConditionalTokenModel {
 public:
  explicit SubprocessModel(std::vector<std::string> argv) {
    if (argv.empty()) throw Error(ErrorCode::kInvalidArgument, "empty model command");
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) throw Error(ErrorCode::kIo, "pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw Error(ErrorCode::kIo, "fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      std::vector<char*> args;
      for (auto& a : argv) args.push_back(a.data());
      args.push_back(nullptr);
      execvp(args[0], args.data());
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    to_ = fdopen(to_child[1], "w");
    from_ = fdopen(from_child[0], "r");
    const auto resp = roundtrip({{"op", "vocabulary"}});
    vocabulary_ = resp.at("vocabulary").get<std::vector<std::string>>();
  }

  SubprocessModel(const SubprocessModel&) = delete;
  SubprocessModel& operator=(const SubprocessModel&) = delete;

  ~SubprocessModel() override {
    if (to_) std::fclose(to_);
    if (from_) std::fclose(from_);
    if (pid_ > 0) waitpid(pid_, nullptr, 0);
  }

  const std::vector<std::string>& vocabulary() const override { return vocabulary_; }

  LogProbs next_log_probs(std::string_view context, std::span<const std::string> prefix) const override {
    TokenSequence p(prefix.begin(), prefix.end());
    return next_log_probs_batch(context, std::span<const TokenSequence>(&p, 1)).front();
  }

  // Sends the whole batch before reading, then matches responses by id.
  std::vector<LogProbs> next_log_probs_batch(std::string_view context,
                                             std::span<const TokenSequence> prefixes) const override {
    std::lock_guard lock(mu_);
    const std::uint64_t first = next_id_;
    for (const auto& p : prefixes) {
      send({{"id", next_id_++}, {"context_id", std::string(context)}, {"prefix", p}});
    }
    std::vector<LogProbs> out(prefixes.size());
    for (std::size_t n = 0; n < prefixes.size(); ++n) {
      const auto resp = receive();
      if (resp.contains("error")) throw Error(ErrorCode::kIo, "model error: " + resp["error"].dump());
      const auto id = resp.at("id").get<std::uint64_t>();
      if (id < first || id >= first + prefixes.size()) throw Error(ErrorCode::kIo, "model answered unknown request id");
      LogProbs d;
      for (const auto& [token, v] : resp.at("logprobs").items()) d[token] = v.get<double>();
      out[id - first] = std::move(d);
    }
    return out;
  }

 private:
  nlohmann::json roundtrip(nlohmann::json req) {
    std::lock_guard lock(mu_);
    req["id"] = next_id_++;
    send(req);
    auto resp = receive();
    if (resp.contains("error")) throw Error(ErrorCode::kIo, "model error: " + resp["error"].dump());
    return resp;
  }

  void send(const nlohmann::json& req) const {
    const auto line = req.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), to_) != line.size() || std::fflush(to_) != 0) {
      throw Error(ErrorCode::kIo, "model process closed its input");
    }
  }

  nlohmann::json receive() const {
    std::string line;
    int c;
    while ((c = std::fgetc(from_)) != EOF && c != '\n') line.push_back(static_cast<char>(c));
    if (line.empty() && c == EOF) throw Error(ErrorCode::kIo, "model process closed its output");
    return nlohmann::json::parse(line);
  }

  pid_t pid_ = -1;
  std::FILE* to_ = nullptr;
  std::FILE* from_ = nullptr;
  std::vector<std::string> vocabulary_;
  mutable std::mutex mu_;
  mutable std::uint64_t next_id_ = 1;
};

}  // namespace radeval
