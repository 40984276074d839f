#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "radeval/service.hpp"
#include "workflow_fuzz.hpp"

namespace radeval::service {
namespace {

namespace wf = radeval::workflow;
using testing::leaks_source;

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("radeval-service-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "images");
  return dir;
}

std::string fake_png(const std::string& tag) { return std::string("\x89PNG\r\n\x1a\n", 8) + "payload-" + tag; }

// ---- config ----

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string& k) -> std::optional<std::string> {
    const auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

TEST(Config, DefaultsFileThenEnvironment) {
  const auto none = env_of({});
  EXPECT_EQ(load_config(std::nullopt, none), ServiceConfig{});

  const auto dir = temp_dir("config");
  const auto path = (dir / "service.json").string();
  std::ofstream(path) << R"({"listen": "0.0.0.0:9000", "data_dir": "/srv/study", "admin_token": "file-admin",
                             "token_ttl_seconds": 60})";
  const auto from_file = load_config(path, none);
  EXPECT_EQ(from_file.host, "0.0.0.0");
  EXPECT_EQ(from_file.port, 9000);
  EXPECT_EQ(from_file.data_dir, "/srv/study");
  EXPECT_EQ(from_file.admin_token, "file-admin");
  EXPECT_EQ(from_file.token_ttl_s, 60);

  const auto both = load_config(path, env_of({{"RADEVAL_LISTEN", ":9100"}, {"RADEVAL_ADMIN_TOKEN", "env-admin"},
                                              {"RADEVAL_TOKEN_TTL", "120"}}));
  EXPECT_EQ(both.host, "0.0.0.0");
  EXPECT_EQ(both.port, 9100);
  EXPECT_EQ(both.data_dir, "/srv/study");
  EXPECT_EQ(both.admin_token, "env-admin");
  EXPECT_EQ(both.token_ttl_s, 120);
}

TEST(Config, InvalidValuesAreRejected) {
  EXPECT_THROW(load_config(std::nullopt, env_of({{"RADEVAL_LISTEN", "host:http"}})), Error);
  EXPECT_THROW(load_config(std::nullopt, env_of({{"RADEVAL_TOKEN_TTL", "-5"}})), Error);
  EXPECT_THROW(load_config("/nonexistent/config.json", env_of({})), Error);
}

// ---- tokens ----

TEST(Tokens, IssueVerifyExpire) {
  std::int64_t now = 1000;
  TokenSigner signer("secret", 60, [&] { return now; });
  const auto t = signer.issue("dr.smith@example.org");
  EXPECT_EQ(t.expires_at, 1060);
  EXPECT_EQ(signer.verify(t.token), "dr.smith@example.org");
  now = 1060;
  try {
    signer.verify(t.token);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnauthorized);
  }
}

TEST(Tokens, TamperingAndForeignSecretsFail) {
  TokenSigner signer("secret", 60, [] { return 0; });
  TokenSigner other("other", 60, [] { return 0; });
  auto t = signer.issue("alice").token;
  EXPECT_THROW(other.verify(t), Error);
  auto forged = t;
  forged.replace(0, 10, "626f62");  // "bob"
  EXPECT_THROW(signer.verify(forged), Error);
  EXPECT_THROW(signer.verify("garbage"), Error);
  auto longer = t;
  longer[longer.find('.') + 1] = '9';
  EXPECT_THROW(signer.verify(longer), Error);
}

// ---- API ----

struct Study {
  std::filesystem::path dir;
  wf::Workflow flow;
  std::int64_t now = 1'700'000'000;
  ServiceConfig cfg;
  std::unique_ptr<Api> api;

  explicit Study(const std::string& name, std::size_t n_cases = 3) : dir(temp_dir(name)) {
    cfg.data_dir = dir.string();
    cfg.admin_token = "admin-secret";
    cfg.token_secret = "s3cret";
    cfg.token_ttl_s = 600;
    std::vector<std::string> ids;
    std::vector<ReportDocument> reports;
    for (std::size_t i = 0; i < n_cases; ++i) {
      const std::string id = "c" + std::to_string(i);
      ids.push_back(id);
      flow.append(wf::CaseRegistered{{id, DatasetTag::kUs, "images/" + id + ".png", View::kPa, Stratum::kAbnormal, Split::kTest}});
      std::ofstream(dir / "images" / (id + ".png"), std::ios::binary) << fake_png(id);
      reports.emplace_back("h-" + id, id, Sections{"Heart size normal.", "No acute process."}, ReportSource::kHumanOriginal);
      reports.emplace_back("m-" + id, id, Sections{"Small left effusion.", "Mild cardiomegaly."}, ReportSource::kModelGenerated);
    }
    for (const auto& r : reports) flow.append(wf::ReportRegistered{r});
    for (const char* r : {"alice", "bob", "carol"}) flow.append(wf::RaterRegistered{r, "radiologist"});
    std::vector<wf::TaskRef> refs;
    for (const auto& t : wf::generate_preference_tasks(ids, reports, 1)) {
      flow.append(wf::PreferenceTaskCreated{t});
      refs.push_back({t.task.task_id, t.task.case_id});
    }
    for (const auto& t : wf::generate_correction_tasks(ids, reports, 1)) {
      flow.append(wf::CorrectionTaskCreated{t});
      refs.push_back({t.task_id, t.case_id});
    }
    const std::vector<std::string> raters = {"alice", "bob"};
    for (const auto& a : wf::assign_raters(refs, raters, {}, 1).assignments) flow.append(wf::AssignmentCreated{a});
    api = std::make_unique<Api>(flow, cfg, [this] { return now; });
  }

  std::string token(const std::string& rater) {
    const auto r = api->handle({"POST", "/v1/session", {}, json{{"rater_id", rater}}.dump()});
    EXPECT_EQ(r.status, 200) << r.body;
    return r.json_body().at("token").get<std::string>();
  }

  Response get(const std::string& path, const std::string& tok, std::map<std::string, std::string> extra = {}) {
    extra["authorization"] = "Bearer " + tok;
    return api->handle({"GET", path, extra, ""});
  }

  Response post(const std::string& path, const std::string& tok, const json& body) {
    return api->handle({"POST", path, {{"authorization", "Bearer " + tok}}, body.dump()});
  }
};

json answer_for(const json& task) {
  if (task.at("kind") == "PREFERENCE") {
    return {{"task_id", task.at("task_id")}, {"choice", "B"}, {"justification", "more complete"}};
  }
  return {{"task_id", task.at("task_id")},
          {"image_quality_ok", true},
          {"displayed_text_sha256", task.at("report").at("sha256")},
          {"edits", json::array()}};
}

TEST(Api, SessionRequiresRegisteredRater) {
  Study st("session");
  EXPECT_EQ(st.api->handle({"POST", "/v1/session", {}, R"({"rater_id": "mallory"})"}).status, 401);
  EXPECT_EQ(st.api->handle({"POST", "/v1/session", {}, "not json"}).status, 422);
  EXPECT_FALSE(st.token("alice").empty());
}

TEST(Api, NextTaskThenDone) {
  Study st("next", 1);
  const auto tok = st.token("alice");
  std::set<std::string> seen;
  for (;;) {
    const auto r = st.get("/v1/tasks/next", tok);
    ASSERT_EQ(r.status, 200);
    const auto j = r.json_body();
    if (j.at("status") == "done") break;
    const auto& task = j.at("task");
    EXPECT_TRUE(seen.insert(task.at("task_id")).second);
    EXPECT_FALSE(leaks_source(j));
    EXPECT_EQ(st.post("/v1/responses", tok, answer_for(task)).status, 200);
  }
  EXPECT_EQ(seen.size(), 3u);
  const auto unauth = st.api->handle({"GET", "/v1/tasks/next", {}, ""});
  EXPECT_EQ(unauth.status, 401);
  EXPECT_EQ(unauth.json_body().at("code"), "unauthorized");
}

TEST(Api, CorrectionWithTwoEditsIsRecorded) {
  Study st("edits", 1);
  const auto tok = st.token("alice");
  const std::string task = "corr-c0-1";
  const auto text = st.flow.read([&](const wf::WorkflowState& s) {
    return s.reports.at(s.correction_tasks.at(task).report_id).display_text();
  });
  const auto body = json{{"task_id", task},
                         {"image_quality_ok", true},
                         {"displayed_text_sha256", sha256_hex(text)},
                         {"edits",
                          {{{"span", {10, 15}}, {"reason", "INCORRECT_SEVERITY"}, {"clinically_significant", true}, {"replacement", "Large"}},
                           {{"span", {16, 20}}, {"reason", "INCORRECT_LOCATION"}, {"clinically_significant", false}, {"replacement", "right"}}}}};
  const auto r = st.post("/v1/responses", tok, body);
  ASSERT_EQ(r.status, 200) << r.body;
  const auto seq = r.json_body().at("seq").get<std::uint64_t>();

  auto retry = body;
  retry["timestamp_ms"] = 12345;
  const auto again = st.post("/v1/responses", tok, retry);
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(again.json_body().at("seq"), seq);

  auto changed = body;
  changed["edits"].erase(1);
  const auto conflict = st.post("/v1/responses", tok, changed);
  EXPECT_EQ(conflict.status, 409);
  EXPECT_EQ(conflict.json_body().at("code"), "conflict");
}

TEST(Api, OutOfBoundsSpanNamesTheField) {
  Study st("span", 1);
  const auto tok = st.token("bob");
  const std::string task = "corr-c0-2";
  const auto text = st.flow.read([&](const wf::WorkflowState& s) {
    return s.reports.at(s.correction_tasks.at(task).report_id).display_text();
  });
  const auto r = st.post("/v1/responses", tok,
                         {{"task_id", task},
                          {"image_quality_ok", true},
                          {"displayed_text_sha256", sha256_hex(text)},
                          {"edits", {{{"span", {text.size() - 2, text.size() + 4}}, {"reason", "INCORRECT_FINDING"},
                                      {"clinically_significant", true}, {"replacement", ""}}}}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.json_body().at("code"), "validation_failed");
  EXPECT_EQ(r.json_body().at("field"), "edits[0].span");
}

TEST(Api, SubmissionErrors) {
  Study st("submit-errors", 1);
  const auto alice = st.token("alice");
  const auto carol = st.token("carol");
  EXPECT_EQ(st.post("/v1/responses", alice, {{"task_id", "nope"}, {"choice", "A"}}).status, 404);
  EXPECT_EQ(st.post("/v1/responses", carol, {{"task_id", "pref-c0"}, {"choice", "A"}, {"justification", "x"}}).status,
            403);
  EXPECT_EQ(st.post("/v1/responses", alice,
                    {{"task_id", "pref-c0"}, {"rater_id", "bob"}, {"choice", "A"}, {"justification", "x"}})
                .status,
            401);
  const auto bad_choice = st.post("/v1/responses", alice, {{"task_id", "pref-c0"}, {"choice", "C"}, {"justification", "x"}});
  EXPECT_EQ(bad_choice.status, 422);
  EXPECT_EQ(bad_choice.json_body().at("field"), "choice");
}

TEST(Api, ImageAccessAndCaching) {
  Study st("image", 2);
  const auto alice = st.token("alice");
  const auto r = st.get("/v1/cases/c0/image", alice);
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(r.content_type, "image/png");
  std::ifstream in(st.dir / "images" / "c0.png", std::ios::binary);
  const std::string stored((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(sha256_hex(r.body), sha256_hex(stored));
  EXPECT_EQ(r.headers.at("ETag"), "\"" + sha256_hex(stored) + "\"");
  EXPECT_EQ(st.get("/v1/cases/c0/image", alice, {{"if-none-match", r.headers.at("ETag")}}).status, 304);

  EXPECT_EQ(st.get("/v1/cases/c0/image", st.token("carol")).status, 401);
  EXPECT_EQ(st.get("/v1/cases/zz/image", alice).status, 401);

  std::ofstream(st.dir / "images" / "c1.png", std::ios::binary) << "GIF89a....";
  EXPECT_EQ(st.get("/v1/cases/c1/image", alice).status, 422);
}

TEST(Api, ExpiredTokenRejectedEverywhere) {
  Study st("expiry", 1);
  const auto tok = st.token("alice");
  st.now += st.cfg.token_ttl_s;
  EXPECT_EQ(st.get("/v1/tasks/next", tok).status, 401);
  EXPECT_EQ(st.get("/v1/cases/c0/image", tok).status, 401);
  EXPECT_EQ(st.post("/v1/responses", tok, {{"task_id", "pref-c0"}, {"choice", "A"}, {"justification", "x"}}).status, 401);
}

TEST(Api, AdminProgressNeedsAdminToken) {
  Study st("admin", 2);
  EXPECT_EQ(st.api->handle({"GET", "/v1/admin/progress", {}, ""}).status, 401);
  EXPECT_EQ(st.api->handle({"GET", "/v1/admin/progress", {{"x-admin-token", "wrong"}}, ""}).status, 401);
  const auto r = st.api->handle({"GET", "/v1/admin/progress", {{"x-admin-token", "admin-secret"}}, ""});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.json_body().at("preference").at("tasks"), 2);
  EXPECT_EQ(r.json_body().at("correction").at("tasks"), 4);
}

TEST(Api, UnknownRouteIsNotFound) {
  Study st("routes", 1);
  const auto r = st.api->handle({"GET", "/v2/anything", {}, ""});
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.json_body().at("code"), "not_found");
}

// ---- over the wire ----

TEST(Wire, ConcurrentPollingNeverServesUnassignedTasks) {
  Study st("wire", 40);
  httplib::Server server;
  bind_routes(server, *st.api);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const auto plan = st.flow.snapshot().assignments;
  std::atomic<int> violations{0}, leaks{0}, served{0};
  auto worker = [&](const std::string& rater) {
    httplib::Client cli("127.0.0.1", port);
    const auto s = cli.Post("/v1/session", json{{"rater_id", rater}}.dump(), "application/json");
    ASSERT_TRUE(s);
    const auto tok = json::parse(s->body).at("token").get<std::string>();
    const httplib::Headers auth = {{"Authorization", "Bearer " + tok}};
    for (int i = 0; i < 1000; ++i) {
      const auto r = cli.Get("/v1/tasks/next", auth);
      ASSERT_TRUE(r);
      if (leaks_source(json::parse(r->body))) ++leaks;
      const auto j = json::parse(r->body);
      if (j.at("status") == "done") continue;
      ++served;
      const auto task = j.at("task").at("task_id").get<std::string>();
      const auto& list = plan.at(task);
      if (std::none_of(list.begin(), list.end(), [&](const wf::Assignment& a) { return a.rater_id == rater; })) {
        ++violations;
      }
      // Answer every third poll, resubmitting some answers as retries.
      if (i % 3 == 0) {
        const auto body = answer_for(j.at("task")).dump();
        const auto p1 = cli.Post("/v1/responses", auth, body, "application/json");
        ASSERT_TRUE(p1);
        if (leaks_source(json::parse(p1->body))) ++leaks;
        if (i % 2 == 0) {
          const auto p2 = cli.Post("/v1/responses", auth, body, "application/json");
          ASSERT_TRUE(p2);
          if (json::parse(p2->body).at("seq") != json::parse(p1->body).at("seq")) ++violations;
        }
      }
    }
  };
  std::thread a(worker, "alice"), b(worker, "bob");
  a.join();
  b.join();

  // An unassigned rater gets nothing.
  httplib::Client cli("127.0.0.1", port);
  const auto s = cli.Post("/v1/session", json{{"rater_id", "carol"}}.dump(), "application/json");
  const auto tok = json::parse(s->body).at("token").get<std::string>();
  const auto r = cli.Get("/v1/tasks/next", {{"Authorization", "Bearer " + tok}});
  EXPECT_EQ(json::parse(r->body).at("status"), "done");

  server.stop();
  t.join();
  EXPECT_EQ(violations.load(), 0);
  EXPECT_EQ(leaks.load(), 0);
  EXPECT_GT(served.load(), 0);
  const auto final_state = st.flow.snapshot();
  EXPECT_EQ(final_state.preference_responses.size() + final_state.correction_responses.size(), 240u);
}

}  // namespace
}  // namespace radeval::service
