// radeval: command-line front end for corpus preparation, labeling,
// scoring, decoding, the rating workflow, analysis and the rating service.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "radeval/analysis.hpp"
#include "radeval/corpus.hpp"
#include "radeval/decoder.hpp"
#include "radeval/event_log.hpp"
#include "radeval/model_protocol.hpp"
#include "radeval/scoring.hpp"
#include "radeval/service.hpp"
#include "radeval/toy_model.hpp"
#include "radeval/workflow.hpp"

namespace fs = std::filesystem;
namespace wf = radeval::workflow;
using nlohmann::json;
using radeval::Error;
using radeval::ErrorCode;

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto& c : s) c = c == '-' ? '_' : c;
  return s;
}

std::ofstream open_out(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path, "out");
  return out;
}

void close_out(std::ofstream& out, const std::string& path) {
  out.close();
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path, "out");
}

// Writes through a temporary file so that the target may also be the input.
template <typename F>
void write_file(const std::string& path, F&& body) {
  const std::string tmp = path + ".tmp";
  {
    auto out = open_out(tmp);
    body(out);
    close_out(out, tmp);
  }
  fs::rename(tmp, path);
}

radeval::Corpus load_corpus(const std::string& path) {
  auto r = radeval::ingest_corpus(path, radeval::CorpusFormat::kJsonl);
  if (!r.rejections.empty()) {
    const auto& first = r.rejections.front();
    throw Error(ErrorCode::kSchema,
                path + " line " + std::to_string(first.line) + ": " + first.reason + "; re-run `radeval ingest`",
                "corpus");
  }
  return std::move(r.corpus);
}

std::vector<std::string> read_raters_csv(const std::string& path, std::map<std::string, std::string>& quals) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path, "raters");
  const auto rows = radeval::csv::read(in);
  if (rows.empty() || rows[0].fields.empty() || rows[0].fields[0] != "rater_id") {
    throw Error(ErrorCode::kSchema, path + ": header must start with rater_id", "raters");
  }
  std::vector<std::string> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i].fields;
    if (f.empty() || f[0].empty()) {
      throw Error(ErrorCode::kSchema, path + " line " + std::to_string(rows[i].line) + ": empty rater_id", "raters");
    }
    out.push_back(f[0]);
    quals[f[0]] = f.size() > 1 ? f[1] : "";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global paths

struct Paths {
  std::string data_dir = ".";
  std::string corpus;
  std::string log;

  std::string in_data(const std::string& name) const { return (fs::path(data_dir) / name).string(); }
  std::string corpus_path() const { return corpus.empty() ? in_data("corpus.jsonl") : corpus; }
  std::string log_path() const { return log.empty() ? in_data("events.log") : log; }
};

// ---------------------------------------------------------------------------
// Corpus commands

struct IngestArgs {
  std::string path;
  std::string format = "jsonl";
  std::string out;
};

void run_ingest(const Paths& p, const IngestArgs& a) {
  const auto format = a.format == "csv" ? radeval::CorpusFormat::kCsv : radeval::CorpusFormat::kJsonl;
  auto r = radeval::ingest_corpus(a.path, format);
  for (const auto& rej : r.rejections) std::cerr << a.path << " line " << rej.line << ": " << rej.reason << '\n';
  const auto corpus = radeval::derive_strata(r.corpus);
  const auto out = a.out.empty() ? p.corpus_path() : a.out;
  write_file(out, [&](std::ostream& o) { radeval::write_jsonl(corpus, o); });
  std::cout << "admitted " << corpus.size() << ", rejected " << r.rejections.size() << " -> " << out << '\n';
}

struct FilterArgs {
  std::string out;
  std::string removed;
  std::string lexicon;
};

void run_filter(const Paths& p, const FilterArgs& a) {
  auto lex = radeval::default_prior_reference_lexicon();
  if (!a.lexicon.empty()) {
    std::ifstream in(a.lexicon);
    if (!in) throw Error(ErrorCode::kIo, "cannot read " + a.lexicon, "lexicon");
    std::stringstream ss;
    ss << in.rdbuf();
    lex = radeval::parse_prior_reference_lexicon(ss.str());
  }
  const auto corpus = load_corpus(p.corpus_path());
  const auto r = radeval::filter_training_set(corpus, lex);
  const auto out = a.out.empty() ? p.corpus_path() : a.out;
  write_file(out, [&](std::ostream& o) { radeval::write_jsonl(r.corpus, o); });
  const auto removed_path = a.removed.empty() ? p.in_data("removed.csv") : a.removed;
  write_file(removed_path, [&](std::ostream& o) {
    radeval::csv::write_row(o, {"case_id", "reason"});
    for (const auto& rm : r.removed) radeval::csv::write_row(o, {rm.case_id, radeval::to_string(rm.reason)});
  });
  std::map<std::string, std::size_t> by_reason;
  for (const auto& rm : r.removed) ++by_reason[radeval::to_string(rm.reason)];
  std::cout << "removed " << r.removed.size() << " of " << corpus.count(radeval::Split::kTrain) << " TRAIN cases";
  for (const auto& [reason, n] : by_reason) std::cout << ", " << reason << " " << n;
  std::cout << " -> " << out << '\n';
}

void run_weights(const Paths& p, const std::string& out_arg) {
  const auto weights = radeval::compute_example_weights(load_corpus(p.corpus_path()));
  const auto out = out_arg.empty() ? p.in_data("weights.csv") : out_arg;
  write_file(out, [&](std::ostream& o) { radeval::write_weights_csv(weights, o); });
  std::cout << "wrote " << weights.size() << " weights -> " << out << '\n';
}

struct SampleArgs {
  std::size_t normal = 0;
  std::size_t abnormal = 0;
  std::uint64_t seed = 0;
  std::string split;
  std::string dataset;
  std::string out;
};

void run_sample(const Paths& p, const SampleArgs& a) {
  radeval::SampleFilter filter;
  if (!a.split.empty()) {
    filter.split = radeval::parse_split(upper(a.split));
    if (!filter.split) throw Error(ErrorCode::kInvalidArgument, "invalid split '" + a.split + "'", "split");
  }
  if (!a.dataset.empty()) {
    filter.dataset_tag = radeval::parse_dataset_tag(upper(a.dataset));
    if (!filter.dataset_tag) throw Error(ErrorCode::kInvalidArgument, "invalid dataset '" + a.dataset + "'", "dataset");
  }
  const auto m = radeval::stratified_sample(load_corpus(p.corpus_path()), a.normal, a.abnormal, a.seed, filter);
  const auto out = a.out.empty() ? p.in_data("sample.json") : a.out;
  write_file(out, [&](std::ostream& o) { o << radeval::to_json(m).dump(2) << '\n'; });
  std::cout << "sampled " << m.case_ids.size() << " cases -> " << out << '\n';
}

void run_label(const Paths& p, const std::string& out_arg, const std::string& lexicon) {
  const auto lex = lexicon.empty() ? radeval::default_lexicon() : radeval::load_lexicon(lexicon);
  const auto corpus = load_corpus(p.corpus_path());
  const auto out = out_arg.empty() ? p.in_data("labels.csv") : out_arg;
  write_file(out, [&](std::ostream& o) { radeval::scoring::write_labels_csv(corpus, o, lex); });
  std::cout << "labelled " << corpus.size() << " reports -> " << out << '\n';
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string pred, ref, pred_graphs, ref_graphs, out;
  std::string metrics = "bleu4,rouge,cider,f1-all,f1-top5";
  std::size_t bootstrap = radeval::metrics::kDefaultResamples;
  double level = radeval::metrics::kDefaultLevel;
  std::uint64_t seed = 0;
  bool uncertain_positive = false;
};

radeval::scoring::Graphs load_graphs(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path, "graphs");
  return radeval::metrics::read_graphs_jsonl(in);
}

void run_score(const ScoreArgs& a) {
  radeval::scoring::ScoreOptions o;
  o.metrics = radeval::scoring::parse_metric_list(a.metrics);
  o.n_resamples = a.bootstrap;
  o.level = a.level;
  o.seed = a.seed;
  if (a.uncertain_positive) o.uncertain = radeval::metrics::UncertainPolicy::kAsPositive;
  const bool graphs = std::find(o.metrics.begin(), o.metrics.end(), "graph-f1") != o.metrics.end();
  if (graphs && (a.pred_graphs.empty() || a.ref_graphs.empty())) {
    throw Error(ErrorCode::kInvalidArgument, "graph-f1 needs --pred-graphs and --ref-graphs", "metrics");
  }
  const auto pred = radeval::scoring::read_reports_file(a.pred, radeval::ReportSource::kModelGenerated);
  const auto ref = radeval::scoring::read_reports_file(a.ref, radeval::ReportSource::kHumanOriginal);
  const auto j = radeval::scoring::score(pred, ref, o, load_graphs(a.pred_graphs), load_graphs(a.ref_graphs));
  if (a.out.empty() || a.out == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    write_file(a.out, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
    std::cout << "scored " << j["meta"]["n_pairs"] << " pairs -> " << a.out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodeArgs {
  std::string model;
  std::string model_command;
  std::string context;
  std::optional<std::size_t> beam;
  std::optional<double> nucleus;
  std::size_t samples = 250;
  std::uint64_t seed = 0;
  std::size_t max_length = 128;
  bool length_normalize = false;
  bool ensemble = false;
};

std::unique_ptr<radeval::ConditionalTokenModel> open_model(const DecodeArgs& a) {
  if (!a.model_command.empty()) {
    std::istringstream in(a.model_command);
    std::vector<std::string> argv{std::istream_iterator<std::string>(in), std::istream_iterator<std::string>()};
    return std::make_unique<radeval::SubprocessModel>(argv);
  }
  if (a.model.empty()) throw Error(ErrorCode::kInvalidArgument, "give --model or --model-command", "model");
  return std::make_unique<radeval::ToyModel>(radeval::ToyModel::load(a.model));
}

json hypothesis_json(const radeval::Hypothesis& h) {
  return {{"tokens", h.tokens}, {"text", radeval::join(h.tokens)}, {"log_likelihood", h.log_likelihood}};
}

void run_decode(const DecodeArgs& a) {
  if (a.beam.has_value() == a.nucleus.has_value()) {
    throw Error(ErrorCode::kInvalidArgument, "give exactly one of --beam and --nucleus", "mode");
  }
  const auto model = open_model(a);
  radeval::DecodeConfig cfg;
  cfg.max_length = a.max_length;
  cfg.seed = a.seed;
  cfg.n_samples = a.samples;
  cfg.length_normalize = a.length_normalize;
  if (a.beam) {
    cfg.beam_width = *a.beam;
    const auto hyps = radeval::beam_search(*model, a.context, cfg);
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      auto j = hypothesis_json(hyps[i]);
      j["rank"] = i + 1;
      std::cout << j.dump() << '\n';
    }
    return;
  }
  cfg.nucleus_p = *a.nucleus;
  if (cfg.n_samples == 0) throw Error(ErrorCode::kInvalidArgument, "--samples must be >= 1", "samples");
  if (a.ensemble) {
    const auto r = radeval::ensemble_condition_probabilities(*model, a.context, cfg);
    json probs = json::object();
    for (auto c : radeval::kAllCategories) probs[std::string(radeval::to_string(c))] = r.probability(c);
    std::cout << json{{"n_samples", r.n_samples}, {"seed", cfg.seed}, {"nucleus_p", cfg.nucleus_p},
                      {"probabilities", probs}}.dump(2)
              << '\n';
    return;
  }
  radeval::Rng rng(cfg.seed);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    auto j = hypothesis_json(radeval::nucleus_sample(*model, a.context, cfg, rng));
    j["sample"] = i + 1;
    std::cout << j.dump() << '\n';
  }
}

void run_model_server(const std::string& model) {
  const auto m = radeval::ToyModel::load(model);
  radeval::serve_model_lines(m, std::cin, std::cout);
}

// ---------------------------------------------------------------------------
// Rating workflow

wf::Workflow open_log(const Paths& p) {
  const auto path = p.log_path();
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  return wf::Workflow(path);
}

struct RegisterArgs {
  std::string candidates;
  std::string sample;
};

void run_tasks_register(const Paths& p, const RegisterArgs& a) {
  const auto corpus = load_corpus(p.corpus_path());
  std::optional<std::set<std::string>> keep;
  if (!a.sample.empty()) {
    std::ifstream in(a.sample);
    if (!in) throw Error(ErrorCode::kIo, "cannot read " + a.sample, "sample");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchema, a.sample + ": " + e.what(), "sample");
    }
    const auto m = radeval::sample_manifest_from_json(j);
    keep.emplace(m.case_ids.begin(), m.case_ids.end());
  }
  std::vector<radeval::CorpusEntry> entries;
  for (const auto& e : corpus.entries()) {
    if (!keep || keep->count(e.record.case_id)) entries.push_back(e);
  }
  const radeval::Corpus selected(std::move(entries));
  std::vector<radeval::ReportDocument> extra;
  for (auto& r : radeval::scoring::read_reports_file(a.candidates, radeval::ReportSource::kModelGenerated)) {
    if (!selected.find(r.case_id())) continue;
    r.set_source(radeval::ReportSource::kModelGenerated);
    extra.push_back(std::move(r));
  }
  auto flow = open_log(p);
  const auto seqs = flow.append_all(wf::registration_events(selected, extra));
  std::cout << "registered " << selected.size() << " cases and " << selected.size() + extra.size()
            << " reports; last seq " << (seqs.empty() ? 0 : seqs.back()) << '\n';
}

struct GenerateArgs {
  std::string phase;
  std::uint64_t seed = 0;
  std::string policy = "first-completed";
};

void run_tasks_generate(const Paths& p, const GenerateArgs& a) {
  const auto phase = wf::parse_phase(upper(a.phase));
  auto flow = open_log(p);
  const auto s = flow.snapshot();
  std::vector<wf::EventPayload> events;
  if (phase == wf::Phase::kCollaboration) {
    const auto round = wf::generate_collaboration_round(s, a.seed, wf::parse_collaboration_policy(upper(a.policy)));
    for (const auto& r : round.edited_reports) events.push_back(wf::ReportRegistered{r});
    for (const auto& t : round.tasks) {
      if (!s.preference_tasks.count(t.task.task_id)) events.push_back(wf::PreferenceTaskCreated{t});
    }
    for (const auto& [rater, case_id] : round.exclusions) {
      if (!s.exclusions.count({rater, case_id})) events.push_back(wf::ExclusionAdded{rater, case_id});
    }
    std::erase_if(events, [&](const wf::EventPayload& e) {
      const auto* r = std::get_if<wf::ReportRegistered>(&e);
      return r && s.reports.count(r->report.report_id());
    });
  } else {
    std::vector<radeval::ReportDocument> reports;
    std::set<std::string> cases;
    for (const auto& [id, r] : s.reports) {
      if (r.source() == radeval::ReportSource::kHumanOriginal || r.source() == radeval::ReportSource::kModelGenerated) {
        reports.push_back(r);
      }
    }
    std::map<std::string, std::set<radeval::ReportSource>> sources;
    for (const auto& r : reports) sources[r.case_id()].insert(r.source());
    std::set<std::string> covered;
    for (const auto& [id, t] : s.preference_tasks) {
      if (phase == wf::Phase::kPreference && t.task.phase == wf::Phase::kPreference) covered.insert(t.task.case_id);
    }
    for (const auto& [id, t] : s.correction_tasks) {
      if (phase == wf::Phase::kCorrection) covered.insert(t.case_id);
    }
    std::vector<std::string> ids;
    for (const auto& [case_id, src] : sources) {
      if (src.size() == 2 && !covered.count(case_id)) ids.push_back(case_id);
    }
    if (phase == wf::Phase::kPreference) {
      for (auto& t : wf::generate_preference_tasks(ids, reports, a.seed)) events.push_back(wf::PreferenceTaskCreated{t});
    } else {
      for (auto& t : wf::generate_correction_tasks(ids, reports, a.seed)) events.push_back(wf::CorrectionTaskCreated{t});
    }
  }
  flow.append_all(events);
  std::size_t tasks = 0;
  for (const auto& e : events) {
    tasks += std::holds_alternative<wf::PreferenceTaskCreated>(e) || std::holds_alternative<wf::CorrectionTaskCreated>(e);
  }
  std::cout << "created " << tasks << ' ' << a.phase << " tasks\n";
}

struct AssignArgs {
  std::string raters;
  std::uint64_t seed = 0;
  std::size_t per_task = wf::kRatersPerTask;
};

void run_tasks_assign(const Paths& p, const AssignArgs& a) {
  std::map<std::string, std::string> quals;
  const auto raters = read_raters_csv(a.raters, quals);
  auto flow = open_log(p);
  for (const auto& r : raters) {
    const bool known = flow.read([&](const wf::WorkflowState& s) { return s.raters.count(r) > 0; });
    if (!known) flow.append(wf::RaterRegistered{r, quals[r]});
  }
  const auto s = flow.snapshot();
  std::vector<wf::TaskRef> pending;
  for (const auto& [id, t] : s.preference_tasks) {
    if (!s.assignments.count(id)) pending.push_back({id, t.task.case_id});
  }
  for (const auto& [id, t] : s.correction_tasks) {
    if (!s.assignments.count(id)) pending.push_back({id, t.case_id});
  }
  const auto plan = wf::assign_raters(pending, raters, s.exclusions, a.seed, a.per_task, wf::rater_loads(s));
  flow.append_all(wf::plan_events(plan));
  std::cout << "assigned " << pending.size() << " tasks (" << plan.assignments.size() << " assignments)\n";
}

void run_tasks_exclude(const Paths& p, const std::string& rater, const std::string& case_id) {
  auto flow = open_log(p);
  flow.append(wf::ExclusionAdded{rater, case_id});
  std::cout << "excluded " << rater << " from " << case_id << '\n';
}

void run_tasks_export(const Paths& p, const std::string& format, const std::string& rater, const std::string& out_arg) {
  if (format != "jsonl") throw Error(ErrorCode::kInvalidArgument, "unsupported format '" + format + "'", "format");
  const auto s = wf::replay(p.log_path());
  auto emit = [&](std::ostream& o) {
    for (const auto& [id, r] : s.raters) {
      if (!rater.empty() && id != rater) continue;
      std::size_t position = 0;
      for (const auto& task : s.queue(id)) {
        o << json{{"rater_id", id},
                  {"position", position++},
                  {"answered", s.has_response(task, id)},
                  {"task", wf::task_payload(s, task)}}
                 .dump()
          << '\n';
      }
    }
  };
  if (out_arg.empty() || out_arg == "-") {
    emit(std::cout);
  } else {
    write_file(out_arg, emit);
  }
}

void run_tasks_submit(const Paths& p, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path, "responses");
  auto flow = open_log(p);
  std::string line;
  std::size_t line_no = 0, recorded = 0, failed = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::kSchema, e.what());
      }
      const auto task = j.value("task_id", std::string());
      const bool pref = flow.read([&](const wf::WorkflowState& s) {
        if (!s.has_task(task)) throw Error(ErrorCode::kUnknownTask, "unknown task '" + task + "'", "task_id");
        return s.preference_tasks.count(task) > 0;
      });
      const auto seq = pref ? flow.record_response(wf::preference_response_from_json(j))
                            : flow.record_response(wf::correction_response_from_json(j));
      std::cout << json{{"line", line_no}, {"status", "recorded"}, {"seq", seq}}.dump() << '\n';
      ++recorded;
    } catch (const Error& e) {
      std::cout << json{{"line", line_no}, {"status", "rejected"}, {"code", radeval::to_string(e.code())},
                        {"field", e.field()}, {"message", e.what()}}
                       .dump()
                << '\n';
      ++failed;
    }
  }
  std::cerr << "recorded " << recorded << ", rejected " << failed << '\n';
  if (failed) throw Error(ErrorCode::kValidation, std::to_string(failed) + " responses rejected", "responses");
}

void run_tasks_progress(const Paths& p) { std::cout << wf::progress(wf::replay(p.log_path())).dump(2) << '\n'; }

// ---------------------------------------------------------------------------
// analyze and serve

struct AnalyzeArgs {
  std::string out = "results";
  std::size_t bootstrap = radeval::metrics::kDefaultResamples;
  double level = radeval::metrics::kDefaultLevel;
  std::uint64_t seed = 0;
  bool skip_incomplete = false;
};

void run_analyze(const Paths& p, const AnalyzeArgs& a) {
  const auto path = p.log_path();
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "no event log at " + path, "log");
  const auto s = wf::replay(path);
  radeval::analysis::AnalysisOptions o;
  o.n_resamples = a.bootstrap;
  o.level = a.level;
  o.seed = a.seed;
  o.skip_incomplete = a.skip_incomplete;
  const auto r = radeval::analysis::analyze(s, o);
  radeval::analysis::export_results(r, a.out);
  std::cout << "analysed " << s.last_seq << " events -> " << a.out << '\n';
}

std::atomic<httplib::Server*> g_server{nullptr};

void stop_server(int) {
  if (auto* s = g_server.load()) s->stop();
}

void run_serve(const std::optional<std::string>& config) {
  const auto cfg = radeval::service::load_config(config);
  fs::create_directories(cfg.data_dir);
  wf::Workflow flow((fs::path(cfg.data_dir) / "events.log").string());
  radeval::service::Api api(flow, cfg);
  httplib::Server server;
  radeval::service::bind_routes(server, api);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  if (!server.bind_to_port(cfg.host, cfg.port)) {
    throw Error(ErrorCode::kIo, "cannot listen on " + cfg.host + ":" + std::to_string(cfg.port), "listen");
  }
  std::cerr << "listening on " << cfg.host << ':' << cfg.port << ", data in " << cfg.data_dir << '\n';
  server.listen_after_bind();
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radiology report evaluation toolkit"};
  app.require_subcommand(1);
  Paths paths;
  app.add_option("--data-dir", paths.data_dir, "Directory holding corpus.jsonl and events.log")
      ->capture_default_str();

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Ingest a corpus file and derive strata");
  c_ingest->add_option("path", ingest.path, "Input file")->required();
  c_ingest->add_option("--format", ingest.format)->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
  c_ingest->add_option("--out", ingest.out, "Output corpus (default <data-dir>/corpus.jsonl)");

  FilterArgs filter;
  auto* c_filter = app.add_subcommand("filter-train", "Drop lateral, impression-less and prior-referencing TRAIN cases");
  c_filter->add_option("--corpus", paths.corpus);
  c_filter->add_option("--out", filter.out, "Filtered corpus (default: rewrite the input)");
  c_filter->add_option("--removed", filter.removed, "Removal list (default <data-dir>/removed.csv)");
  c_filter->add_option("--lexicon", filter.lexicon, "Prior-reference phrase file");

  std::string weights_out;
  auto* c_weights = app.add_subcommand("weights", "Inverse-prevalence example weights for the TRAIN split");
  c_weights->add_option("--corpus", paths.corpus);
  c_weights->add_option("--out", weights_out, "Output CSV (default <data-dir>/weights.csv)");

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Draw a stratified study sample");
  c_sample->add_option("--corpus", paths.corpus);
  c_sample->add_option("--normal", sample.normal)->required();
  c_sample->add_option("--abnormal", sample.abnormal)->required();
  c_sample->add_option("--seed", sample.seed)->required();
  c_sample->add_option("--split", sample.split);
  c_sample->add_option("--dataset", sample.dataset);
  c_sample->add_option("--out", sample.out, "Manifest (default <data-dir>/sample.json)");

  std::string label_out, label_lexicon;
  auto* c_label = app.add_subcommand("label", "Label every report in the corpus");
  c_label->add_option("--corpus", paths.corpus);
  c_label->add_option("--out", label_out, "Output CSV (default <data-dir>/labels.csv)");
  c_label->add_option("--lexicon", label_lexicon, "Finding lexicon file");

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "Score generated reports against references");
  c_score->add_option("--pred", score.pred)->required();
  c_score->add_option("--ref", score.ref)->required();
  c_score->add_option("--metrics", score.metrics)->capture_default_str();
  c_score->add_option("--bootstrap", score.bootstrap, "Resamples; 0 skips intervals")->capture_default_str();
  c_score->add_option("--level", score.level)->capture_default_str();
  c_score->add_option("--seed", score.seed)->capture_default_str();
  c_score->add_option("--pred-graphs", score.pred_graphs);
  c_score->add_option("--ref-graphs", score.ref_graphs);
  c_score->add_flag("--uncertain-positive", score.uncertain_positive, "Count UNCERTAIN labels as positive");
  c_score->add_option("--out", score.out, "metrics.json (default stdout)");

  DecodeArgs decode;
  auto* c_decode = app.add_subcommand("decode-sim", "Run beam search or nucleus sampling on a model");
  c_decode->add_option("--model", decode.model, "Toy model JSON");
  c_decode->add_option("--model-command", decode.model_command,
                       "Generator command line speaking the model protocol, split on whitespace");
  c_decode->add_option("--context", decode.context, "Context id passed to the model");
  c_decode->add_option("--beam", decode.beam, "Beam width");
  c_decode->add_option("--nucleus", decode.nucleus, "Nucleus mass p");
  c_decode->add_option("--samples", decode.samples)->capture_default_str();
  c_decode->add_option("--seed", decode.seed)->capture_default_str();
  c_decode->add_option("--max-length", decode.max_length)->capture_default_str();
  c_decode->add_flag("--length-normalize", decode.length_normalize);
  c_decode->add_flag("--ensemble", decode.ensemble, "Print per-category positive fractions over the samples");

  std::string server_model;
  auto* c_model_server = app.add_subcommand("model-server", "Serve a toy model over stdin/stdout");
  c_model_server->add_option("--model", server_model)->required();

  auto* c_tasks = app.add_subcommand("tasks", "Rating workflow");
  c_tasks->require_subcommand(1);
  c_tasks->add_option("--log", paths.log, "Event log (default <data-dir>/events.log)");

  RegisterArgs reg;
  auto* t_register = c_tasks->add_subcommand("register", "Register cases, original and candidate reports");
  t_register->add_option("--corpus", paths.corpus);
  t_register->add_option("--candidates", reg.candidates, "Generated reports JSONL")->required();
  t_register->add_option("--sample", reg.sample, "Restrict to a sample manifest");

  GenerateArgs gen;
  auto* t_generate = c_tasks->add_subcommand("generate", "Create the tasks of one phase");
  t_generate->add_option("--phase", gen.phase)
      ->required()
      ->check(CLI::IsMember({"preference", "correction", "collaboration"}));
  t_generate->add_option("--seed", gen.seed)->required();
  t_generate->add_option("--policy", gen.policy, "Collaboration edits: first-completed or both-variants")
      ->check(CLI::IsMember({"first-completed", "both-variants"}))
      ->capture_default_str();

  AssignArgs assign;
  auto* t_assign = c_tasks->add_subcommand("assign", "Assign raters to every unassigned task");
  t_assign->add_option("--raters", assign.raters, "CSV: rater_id,qualifications")->required();
  t_assign->add_option("--seed", assign.seed)->capture_default_str();
  t_assign->add_option("--per-task", assign.per_task)->capture_default_str();

  std::string ex_rater, ex_case;
  auto* t_exclude = c_tasks->add_subcommand("exclude", "Keep a rater away from a case in later assignments");
  t_exclude->add_option("--rater", ex_rater)->required();
  t_exclude->add_option("--case", ex_case)->required();

  std::string export_format = "jsonl", export_rater, export_out;
  auto* t_export = c_tasks->add_subcommand("export", "Write blinded task payloads per rater queue");
  t_export->add_option("--format", export_format)->capture_default_str();
  t_export->add_option("--rater", export_rater);
  t_export->add_option("--out", export_out, "Output file (default stdout)");

  std::string submit_path;
  auto* t_submit = c_tasks->add_subcommand("submit", "Record responses from a JSONL file");
  t_submit->add_option("responses", submit_path)->required();

  auto* t_progress = c_tasks->add_subcommand("progress", "Print completion counts");

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "Aggregate a finished study");
  c_analyze->add_option("--log", paths.log, "Event log (default <data-dir>/events.log)");
  c_analyze->add_option("--out", analyze.out)->capture_default_str();
  c_analyze->add_option("--bootstrap", analyze.bootstrap, "Resamples; 0 skips intervals")->capture_default_str();
  c_analyze->add_option("--level", analyze.level)->capture_default_str();
  c_analyze->add_option("--seed", analyze.seed)->capture_default_str();
  c_analyze->add_flag("--skip-incomplete", analyze.skip_incomplete, "Leave out tasks with fewer than two responses");

  std::optional<std::string> config;
  auto* c_serve = app.add_subcommand("serve", "Run the rating service");
  c_serve->add_option("--config", config, "JSON config; RADEVAL_* variables override it");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_ingest) run_ingest(paths, ingest);
    if (*c_filter) run_filter(paths, filter);
    if (*c_weights) run_weights(paths, weights_out);
    if (*c_sample) run_sample(paths, sample);
    if (*c_label) run_label(paths, label_out, label_lexicon);
    if (*c_score) run_score(score);
    if (*c_decode) run_decode(decode);
    if (*c_model_server) run_model_server(server_model);
    if (*t_register) run_tasks_register(paths, reg);
    if (*t_generate) run_tasks_generate(paths, gen);
    if (*t_assign) run_tasks_assign(paths, assign);
    if (*t_exclude) run_tasks_exclude(paths, ex_rater, ex_case);
    if (*t_export) run_tasks_export(paths, export_format, export_rater, export_out);
    if (*t_submit) run_tasks_submit(paths, submit_path);
    if (*t_progress) run_tasks_progress(paths);
    if (*c_analyze) run_analyze(paths, analyze);
    if (*c_serve) run_serve(config);
  } catch (const Error& e) {
    std::cerr << "radeval: " << radeval::to_string(e.code()) << ": " << e.what();
    if (!e.field().empty()) std::cerr << " (field " << e.field() << ')';
    std::cerr << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "radeval: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
