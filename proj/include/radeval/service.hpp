#pragma once

// HTTP interface over the workflow.
//
// `Api` holds the request logic and is independent of the transport, so it
// can be exercised directly; `bind_routes` attaches it to an httplib
// server. Every error body is {"code", "field", "message"}.
//
//   POST /v1/session            {"rater_id"} -> {"token", "expires_at"}
//   GET  /v1/tasks/next         -> {"status": "task", "task": {...}} | {"status": "done"}
//   POST /v1/responses          response payload -> {"status": "recorded", "seq"}
//   GET  /v1/cases/{id}/image   -> image/png
//   GET  /v1/admin/progress     -> progress counts (admin token)

#include <openssl/crypto.h>
#include <openssl/rand.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "radeval/error.hpp"
#include "radeval/event_log.hpp"
#include "radeval/hash.hpp"
#include "radeval/workflow.hpp"

namespace radeval::service {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = ".";
  std::string admin_token;        // empty disables the admin endpoint
  std::string token_secret;       // empty: a random secret per process
  std::int64_t token_ttl_s = 8 * 3600;
  bool operator==(const ServiceConfig&) const = default;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

// "host:port", ":port" or "port".
inline void parse_listen(const std::string& s, ServiceConfig& cfg) {
  const auto colon = s.rfind(':');
  const std::string host = colon == std::string::npos ? "" : s.substr(0, colon);
  const std::string port = colon == std::string::npos ? s : s.substr(colon + 1);
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    cfg.port = p;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "invalid listen address '" + s + "'", "listen");
  }
  if (!host.empty()) cfg.host = host;
}

inline std::int64_t parse_ttl(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoll(s, &used);
    if (used != s.size() || v <= 0) throw std::out_of_range("ttl");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "invalid token ttl '" + s + "'", "token_ttl_seconds");
  }
}

// Defaults, then the JSON config file, then RADEVAL_* environment
// variables. Keys: listen, data_dir, admin_token, token_secret,
// token_ttl_seconds.
inline ServiceConfig load_config(const std::optional<std::string>& path, const EnvLookup& env = process_env) {
  ServiceConfig cfg;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error(ErrorCode::kIo, "cannot read config " + *path, "config");
    json j;
    try {
      in >> j;
      if (j.contains("listen")) parse_listen(j.at("listen").get<std::string>(), cfg);
      if (j.contains("data_dir")) cfg.data_dir = j.at("data_dir").get<std::string>();
      if (j.contains("admin_token")) cfg.admin_token = j.at("admin_token").get<std::string>();
      if (j.contains("token_secret")) cfg.token_secret = j.at("token_secret").get<std::string>();
      if (j.contains("token_ttl_seconds")) cfg.token_ttl_s = j.at("token_ttl_seconds").get<std::int64_t>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchema, std::string("malformed config: ") + e.what(), "config");
    }
  }
  if (auto v = env("RADEVAL_LISTEN")) parse_listen(*v, cfg);
  if (auto v = env("RADEVAL_DATA_DIR")) cfg.data_dir = *v;
  if (auto v = env("RADEVAL_ADMIN_TOKEN")) cfg.admin_token = *v;
  if (auto v = env("RADEVAL_TOKEN_SECRET")) cfg.token_secret = *v;
  if (auto v = env("RADEVAL_TOKEN_TTL")) cfg.token_ttl_s = parse_ttl(*v);
  return cfg;
}

// ---------------------------------------------------------------------------
// Session tokens: "<hex rater_id>.<expiry unix seconds>.<hmac-sha256>"

using Clock = std::function<std::int64_t()>;  // unix seconds

inline std::int64_t system_clock_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

class TokenSigner {
 public:
  TokenSigner(std::string secret, std::int64_t ttl_s, Clock clock = system_clock_seconds)
      : secret_(std::move(secret)), ttl_s_(ttl_s), clock_(std::move(clock)) {
    if (secret_.empty()) {
      unsigned char buf[32];
      if (RAND_bytes(buf, sizeof buf) != 1) throw Error(ErrorCode::kIo, "cannot generate token secret");
      secret_ = to_hex(buf, sizeof buf);
    }
  }

  struct Issued {
    std::string token;
    std::int64_t expires_at = 0;
  };

  Issued issue(const std::string& rater_id) const {
    const auto expiry = clock_() + ttl_s_;
    const auto body = to_hex(reinterpret_cast<const unsigned char*>(rater_id.data()), rater_id.size()) + "." +
                      std::to_string(expiry);
    return {body + "." + hmac_sha256_hex(secret_, body), expiry};
  }

  // The rater id, or kUnauthorized.
  std::string verify(const std::string& token) const {
    const auto d1 = token.find('.');
    const auto d2 = d1 == std::string::npos ? d1 : token.find('.', d1 + 1);
    if (d2 == std::string::npos) throw Error(ErrorCode::kUnauthorized, "malformed session token", "token");
    const auto body = token.substr(0, d2);
    const auto mac = token.substr(d2 + 1);
    const auto want = hmac_sha256_hex(secret_, body);
    if (mac.size() != want.size() || CRYPTO_memcmp(mac.data(), want.data(), want.size()) != 0) {
      throw Error(ErrorCode::kUnauthorized, "invalid session token", "token");
    }
    std::int64_t expiry = 0;
    try {
      expiry = std::stoll(token.substr(d1 + 1, d2 - d1 - 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kUnauthorized, "malformed session token", "token");
    }
    if (clock_() >= expiry) throw Error(ErrorCode::kUnauthorized, "session token expired", "token");
    const auto hex = token.substr(0, d1);
    std::string rater;
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
      rater.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
    }
    return rater;
  }

 private:
  std::string secret_;
  std::int64_t ttl_s_;
  Clock clock_;
};

// ---------------------------------------------------------------------------
// Request handling

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;

  json json_body() const { return json::parse(body); }
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnauthorized: return 401;
    case ErrorCode::kUnassignedRater: return 403;
    case ErrorCode::kUnknownTask:
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kDuplicate: return 409;
    case ErrorCode::kValidation:
    case ErrorCode::kSchema:
    case ErrorCode::kInvalidArgument: return 422;
    case ErrorCode::kIo: return 500;
    default: return 400;
  }
}

inline Response error_response(const Error& e) {
  return {http_status(e.code()), "application/json",
          json{{"code", to_string(e.code())}, {"field", e.field()}, {"message", e.what()}}.dump(), {}};
}

inline Response json_response(const json& j, int status = 200) { return {status, "application/json", j.dump(), {}}; }

class Api {
 public:
  Api(workflow::Workflow& flow, ServiceConfig cfg, Clock clock = system_clock_seconds)
      : flow_(flow), cfg_(std::move(cfg)), signer_(cfg_.token_secret, cfg_.token_ttl_s, std::move(clock)) {}

  Response handle(const Request& req) const {
    try {
      if (req.method == "POST" && req.path == "/v1/session") return session(req);
      if (req.method == "GET" && req.path == "/v1/tasks/next") return next_task(req);
      if (req.method == "POST" && req.path == "/v1/responses") return submit(req);
      if (req.method == "GET" && req.path == "/v1/admin/progress") return progress(req);
      static const std::string prefix = "/v1/cases/", suffix = "/image";
      if (req.method == "GET" && req.path.rfind(prefix, 0) == 0 && req.path.size() > prefix.size() + suffix.size() &&
          req.path.compare(req.path.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return image(req, req.path.substr(prefix.size(), req.path.size() - prefix.size() - suffix.size()));
      }
      throw Error(ErrorCode::kNotFound, "no route for " + req.method + " " + req.path, "path");
    } catch (const Error& e) {
      return error_response(e);
    }
  }

  const TokenSigner& signer() const { return signer_; }

 private:
  static json parse_body(const Request& req) {
    try {
      return json::parse(req.body);
    } catch (const json::exception&) {
      throw Error(ErrorCode::kValidation, "request body is not valid JSON", "body");
    }
  }

  std::string rater_of(const Request& req) const {
    const auto it = req.headers.find("authorization");
    static const std::string bearer = "Bearer ";
    if (it == req.headers.end() || it->second.rfind(bearer, 0) != 0) {
      throw Error(ErrorCode::kUnauthorized, "missing bearer token", "authorization");
    }
    auto rater = signer_.verify(it->second.substr(bearer.size()));
    const bool known = flow_.read([&](const workflow::WorkflowState& s) { return s.raters.count(rater) > 0; });
    if (!known) throw Error(ErrorCode::kUnauthorized, "unknown rater", "token");
    return rater;
  }

  Response session(const Request& req) const {
    const auto body = parse_body(req);
    if (!body.is_object() || !body.contains("rater_id") || !body.at("rater_id").is_string()) {
      throw Error(ErrorCode::kValidation, "rater_id is required", "rater_id");
    }
    const auto rater = body.at("rater_id").get<std::string>();
    const bool known = flow_.read([&](const workflow::WorkflowState& s) { return s.raters.count(rater) > 0; });
    if (!known) throw Error(ErrorCode::kUnauthorized, "unknown rater '" + rater + "'", "rater_id");
    const auto issued = signer_.issue(rater);
    return json_response({{"token", issued.token}, {"expires_at", issued.expires_at}, {"rater_id", rater}});
  }

  Response next_task(const Request& req) const {
    const auto rater = rater_of(req);
    return json_response(flow_.read([&](const workflow::WorkflowState& s) -> json {
      const auto task = s.next_task(rater);
      if (!task) return {{"status", "done"}};
      return {{"status", "task"}, {"task", workflow::task_payload(s, *task)}};
    }));
  }

  Response submit(const Request& req) const {
    const auto rater = rater_of(req);
    auto body = parse_body(req);
    if (!body.is_object() || !body.contains("task_id") || !body.at("task_id").is_string()) {
      throw Error(ErrorCode::kValidation, "task_id is required", "task_id");
    }
    if (body.contains("rater_id") && body.at("rater_id") != rater) {
      throw Error(ErrorCode::kUnauthorized, "rater_id does not match the session", "rater_id");
    }
    body["rater_id"] = rater;
    const auto task_id = body.at("task_id").get<std::string>();
    const auto kind = flow_.read([&](const workflow::WorkflowState& s) -> std::optional<workflow::TaskKind> {
      if (s.preference_tasks.count(task_id)) return workflow::TaskKind::kPreference;
      if (s.correction_tasks.count(task_id)) return workflow::TaskKind::kCorrection;
      return std::nullopt;
    });
    if (!kind) throw Error(ErrorCode::kUnknownTask, "unknown task '" + task_id + "'", "task_id");
    const auto seq = *kind == workflow::TaskKind::kPreference
                         ? flow_.record_response(workflow::preference_response_from_json(body))
                         : flow_.record_response(workflow::correction_response_from_json(body));
    return json_response({{"status", "recorded"}, {"seq", seq}});
  }

  Response image(const Request& req, const std::string& case_id) const {
    const auto rater = rater_of(req);
    const auto ref = flow_.read([&](const workflow::WorkflowState& s) -> std::optional<std::string> {
      const auto it = s.cases.find(case_id);
      if (it == s.cases.end() || !s.rater_sees_case(rater, case_id)) return std::nullopt;
      return it->second.image_ref;
    });
    if (!ref) throw Error(ErrorCode::kUnauthorized, "case '" + case_id + "' is not in your assignments", "case_id");
    const auto path = std::filesystem::path(cfg_.data_dir) / *ref;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kNotFound, "image for case '" + case_id + "' is missing", "case_id");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    static const std::string png_magic = "\x89PNG\r\n\x1a\n";
    if (bytes.compare(0, png_magic.size(), png_magic) != 0) {
      throw Error(ErrorCode::kValidation, "stored image for case '" + case_id + "' is not a PNG", "image_ref");
    }
    const auto etag = "\"" + sha256_hex(bytes) + "\"";
    Response r{200, "image/png", {}, {{"ETag", etag}, {"Cache-Control", "private, max-age=31536000, immutable"}}};
    const auto inm = req.headers.find("if-none-match");
    if (inm != req.headers.end() && inm->second == etag) {
      r.status = 304;
      return r;
    }
    r.body = std::move(bytes);
    return r;
  }

  Response progress(const Request& req) const {
    const auto it = req.headers.find("x-admin-token");
    if (cfg_.admin_token.empty() || it == req.headers.end() || it->second.size() != cfg_.admin_token.size() ||
        CRYPTO_memcmp(it->second.data(), cfg_.admin_token.data(), cfg_.admin_token.size()) != 0) {
      throw Error(ErrorCode::kUnauthorized, "admin token required", "x-admin-token");
    }
    return json_response(flow_.read([](const workflow::WorkflowState& s) { return workflow::progress(s); }));
  }

  workflow::Workflow& flow_;
  ServiceConfig cfg_;
  TokenSigner signer_;
};

// ---------------------------------------------------------------------------
// httplib binding

inline Request from_httplib(const httplib::Request& r) {
  Request out{r.method, r.path, {}, r.body};
  for (const auto& [k, v] : r.headers) {
    std::string key = k;
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.headers[key] = v;
  }
  return out;
}

inline void bind_routes(httplib::Server& server, const Api& api) {
  auto handler = [&api](const httplib::Request& req, httplib::Response& res) {
    const auto r = api.handle(from_httplib(req));
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    if (r.status != 304) res.set_content(r.body, r.content_type);
  };
  server.Get(R"(/.*)", handler);
  server.Post(R"(/.*)", handler);
}

}  // namespace radeval::service
