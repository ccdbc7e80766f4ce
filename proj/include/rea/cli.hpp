#pragma once

// The `rea` command line: run, batch, ablate, inspect, score.
//
// Exit codes: 0 success, 1 batch finished with failed tasks, 2 invalid input
// or configuration (including unreadable files), 3 backend failure,
// 4 protocol or parse failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rea/http_backend.hpp"
#include "rea/rea.hpp"

namespace rea::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitBatchFailures = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitProtocol = 4;

inline int exit_code_for(const Error& e) {
  switch (family_of(e.code())) {
    case ErrorFamily::input:
    case ErrorFamily::io: return kExitInput;
    case ErrorFamily::backend: return kExitBackend;
    case ErrorFamily::protocol: return kExitProtocol;
  }
  return kExitProtocol;
}

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> v{"full",   "no_exp_pool",    "no_360",        "no_peer",
                                          "no_self", "no_supervisory", "no_global_exp", "no_local_exp"};
  return v;
}

inline Ablations variant_flags(const std::string& name) {
  Ablations a;
  if (name == "full") return a;
  if (!a.set(name)) throw Error(ErrorCode::unknown_variant, name, "unknown ablation variant");
  return a;
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, path.string(), "cannot open file");
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::schema_error, path.string(), "not valid JSON");
  return doc;
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, path.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json_file(const fs::path& path, const nlohmann::json& doc) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, path.string(), "cannot write file");
  out << doc.dump(2) << "\n";
}

/// Moves an existing pool file aside so the next run starts from empty.
inline void rotate_pool(const Workspace& ws) {
  const auto pool = ws.pool_path();
  if (!fs::exists(pool)) return;
  fs::path bak = pool;
  bak += ".bak";
  std::error_code ec;
  fs::rename(pool, bak, ec);
  if (ec) throw Error(ErrorCode::io_error, pool.string(), "cannot move pool aside: " + ec.message());
}

/// Flags shared by run, batch and ablate. Names mirror RunConfig fields.
struct SharedOptions {
  std::string backend = "http";
  std::string rules;
  std::string prompts_dir;
  std::string base_url;
  std::string workspace = "workspace";
  RunConfig config;
  double evaluator_temperature = -1.0;
  bool fresh_pool = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--backend", backend, "Completion backend")
        ->check(CLI::IsMember({"http", "scripted"}))
        ->capture_default_str();
    cmd->add_option("--rules", rules, "Scripted backend rules file (JSON)");
    cmd->add_option("--prompts", prompts_dir, "Directory overriding the built-in prompt templates");
    cmd->add_option("--base-url", base_url, "HTTP endpoint (overrides REA_BASE_URL)");
    cmd->add_option("--workspace", workspace, "Workspace directory")->capture_default_str();
    cmd->add_option("--turns", config.turns, "Assessment rounds T")->capture_default_str();
    cmd->add_option("--crew-min", config.crew_min, "Minimum crew size")->capture_default_str();
    cmd->add_option("--crew-max", config.crew_max, "Maximum crew size")->capture_default_str();
    cmd->add_option("--global-k", config.global_select_k, "Global experiences shown per run")
        ->capture_default_str();
    cmd->add_option("--temperature", config.temperature, "Sampling temperature")->capture_default_str();
    cmd->add_option("--evaluator-temperature", evaluator_temperature,
                    "Evaluator temperature (defaults to --temperature)");
    cmd->add_option("--model", config.model_id, "Model id")->capture_default_str();
    cmd->add_option("--max-parallel", config.max_parallel, "Concurrent backend calls per stage")
        ->capture_default_str();
    cmd->add_option("--seed", config.seed, "Seed recorded in run ids")->capture_default_str();
    cmd->add_flag("--no-exp-pool", config.ablations.no_exp_pool, "Disable both experience pools");
    cmd->add_flag("--no-360", config.ablations.no_360, "Disable all assessment");
    cmd->add_flag("--no-peer", config.ablations.no_peer, "Disable peer assessment");
    cmd->add_flag("--no-self", config.ablations.no_self, "Disable self assessment");
    cmd->add_flag("--no-supervisory", config.ablations.no_supervisory, "Disable supervisory assessment");
    cmd->add_flag("--no-global-exp", config.ablations.no_global_exp, "Disable the global pool");
    cmd->add_flag("--no-local-exp", config.ablations.no_local_exp, "Disable local pools");
    cmd->add_flag("--fresh-pool", fresh_pool, "Start from an empty global pool");
  }

  RunConfig run_config() const {
    RunConfig c = config;
    if (evaluator_temperature >= 0.0) c.evaluator_temperature = evaluator_temperature;
    c.validate();
    return c;
  }

  std::unique_ptr<Backend> make_backend() const {
    if (backend == "scripted") {
      if (rules.empty()) return std::make_unique<ScriptedBackend>(ScriptedBackend::echo_table(config.crew_min));
      return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(rules));
    }
    return std::make_unique<HttpBackend>(HttpBackendOptions::from_env(base_url));
  }

  PromptRegistry prompts() const {
    return prompts_dir.empty() ? PromptRegistry::builtin() : PromptRegistry::load_directory(prompts_dir);
  }
};

inline std::string fixed1(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << v;
  return os.str();
}

inline void print_metrics(std::ostream& out, const RunOutcome& o) {
  for (const auto& name : metric_names(o.task_kind)) {
    auto it = o.metrics.find(name);
    if (it != o.metrics.end()) out << "  " << std::left << std::setw(7) << name << fixed1(it->second) << "\n";
  }
}

struct BatchRun {
  std::string task_id;
  std::optional<RunOutcome> outcome;
  std::optional<std::string> error;
  std::optional<std::string> stage;
};

struct BatchResult {
  std::vector<BatchRun> runs;
  bool any_failed() const {
    for (const auto& r : runs)
      if (!r.outcome) return true;
    return false;
  }
  std::vector<MetricSample> samples() const {
    std::vector<MetricSample> out;
    for (const auto& r : runs)
      if (r.outcome) out.push_back(r.outcome->sample());
    return out;
  }
  nlohmann::json runs_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : runs) {
      nlohmann::json j{{"task_id", r.task_id}, {"status", r.outcome ? "ok" : "failed"}};
      if (r.outcome) {
        j["run_id"] = r.outcome->run_id;
        j["backend_calls"] = r.outcome->backend_calls;
        j["metrics"] = r.outcome->metrics;
      }
      if (r.error) j["error"] = *r.error;
      if (r.stage) j["stage"] = *r.stage;
      arr.push_back(std::move(j));
    }
    return arr;
  }
};

/// Runs every valid item of a batch. Sequential runs share the workspace
/// pool in file order; parallel runs each start from an empty pool.
inline BatchResult execute_batch(const std::vector<BatchItem>& items, const Orchestrator& orch,
                                 const Workspace& ws, bool parallel, int jobs, std::ostream& err) {
  BatchResult result;
  result.runs.resize(items.size());
  std::mutex err_mu;
  auto run_one = [&](std::size_t i) {
    auto& slot = result.runs[i];
    const auto& item = items[i];
    slot.task_id = item.task_id;
    if (item.error) {
      slot.error = item.error->what();
      slot.stage = "validate";
    } else {
      try {
        slot.outcome = orch.run_task(*item.task, ws, RunOptions{.fresh_pool = parallel, .run_id = std::nullopt});
      } catch (const RunFailure& e) {
        slot.error = e.what();
        slot.stage = e.stage();
      } catch (const Error& e) {
        slot.error = e.what();
        slot.stage = "setup";
      }
    }
    if (slot.error) {
      std::lock_guard lock(err_mu);
      err << "task " << (slot.task_id.empty() ? "#" + std::to_string(i) : slot.task_id) << " failed at stage "
          << *slot.stage << ": " << *slot.error << "\n";
    }
  };
  if (!parallel) {
    for (std::size_t i = 0; i < items.size(); ++i) run_one(i);
    return result;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> workers;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), items.size());
    for (std::size_t w = 0; w < n; ++w)
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < items.size(); i = next++) run_one(i);
      });
  }
  return result;
}

inline std::string default_batch_id(const std::string& tasks_file, std::int64_t seed) {
  return fs::path(tasks_file).stem().string() + "-s" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_run(const SharedOptions& opts, const std::string& task_file, std::ostream& out) {
  auto config = opts.run_config();
  auto task = validate_task(read_json_file(task_file));
  Workspace ws{opts.workspace};
  auto backend = opts.make_backend();
  auto prompts = opts.prompts();
  if (opts.fresh_pool) rotate_pool(ws);
  Orchestrator orch(*backend, prompts, config);
  auto o = orch.run_task(task, ws);

  out << "run_id: " << o.run_id << "\n";
  out << "final answer:\n" << o.final_answer << "\n\n";
  out << "metrics:\n";
  print_metrics(out, o);
  std::size_t local = 0;
  for (const auto& [_, entries] : o.local_pools) local += entries.size();
  out << "pool delta: +" << o.global_added.size() << " global, +" << local << " local (discarded after run)\n";
  out << "backend calls: " << o.backend_calls << "\n";
  out << "transcript: " << ws.transcript_path(o.run_id).string() << "\n";
  return kExitOk;
}

inline int cmd_batch(const SharedOptions& opts, const std::string& tasks_file, bool parallel,
                     std::string batch_id, std::ostream& out, std::ostream& err) {
  auto config = opts.run_config();
  if (parallel && !opts.fresh_pool)
    throw Error(ErrorCode::config_error, "parallel", "--parallel requires --fresh-pool");
  auto items = validate_batch(read_json_file(tasks_file));
  Workspace ws{opts.workspace};
  auto backend = opts.make_backend();
  auto prompts = opts.prompts();
  if (opts.fresh_pool) rotate_pool(ws);
  if (batch_id.empty()) batch_id = default_batch_id(tasks_file, config.seed);

  Orchestrator orch(*backend, prompts, config);
  auto result = execute_batch(items, orch, ws, parallel, config.max_parallel, err);
  auto samples = result.samples();
  nlohmann::json doc{{"batch_id", batch_id}, {"config", config}, {"runs", result.runs_json()}};
  if (!samples.empty()) {
    auto report = batch_report(samples);
    doc["task_kind"] = to_string(report.kind);
    doc["metrics"] = report.to_json();
    out << "batch " << batch_id << ": " << samples.size() << "/" << items.size() << " runs completed\n";
    out << report.to_table();
  } else {
    doc["metrics"] = nlohmann::json::object();
    out << "batch " << batch_id << ": 0/" << items.size() << " runs completed\n";
  }
  const auto path = ws.reports_dir() / (batch_id + ".json");
  write_json_file(path, doc);
  out << "report: " << path.string() << "\n";
  return result.any_failed() ? kExitBatchFailures : kExitOk;
}

inline int cmd_ablate(const SharedOptions& opts, const std::string& tasks_file,
                      std::vector<std::string> variants, std::string batch_id, std::ostream& out,
                      std::ostream& err) {
  auto base = opts.run_config();
  if (variants.empty()) variants = variant_names();
  for (const auto& v : variants) variant_flags(v);  // reject unknown names before running anything
  auto items = validate_batch(read_json_file(tasks_file));
  auto backend = opts.make_backend();
  auto prompts = opts.prompts();
  if (batch_id.empty()) batch_id = default_batch_id(tasks_file, base.seed);
  const Workspace root{opts.workspace};

  struct Row {
    std::string variant;
    Ablations effective;
    std::optional<BatchReport> report;
    double mean_calls = 0;
    std::size_t failed = 0;
  };
  std::vector<Row> rows;
  nlohmann::json doc{{"batch_id", batch_id}, {"config", base}, {"variants", nlohmann::json::array()}};
  bool any_failed = false;
  std::optional<TaskKind> kind;

  for (const auto& v : variants) {
    RunConfig config = base;
    Ablations flags = variant_flags(v);
    for (const auto& n : base.ablations.names()) flags.set(n);
    config.ablations = flags;
    Workspace ws{root.root / "ablate" / batch_id / v};
    std::error_code ec;
    fs::remove(ws.pool_path(), ec);  // each variant owns an isolated pool

    Orchestrator orch(*backend, prompts, config);
    auto result = execute_batch(items, orch, ws, false, 1, err);
    Row row{v, flags.effective(), std::nullopt, 0.0, 0};
    std::size_t ok = 0;
    for (const auto& r : result.runs) {
      if (r.outcome) {
        row.mean_calls += static_cast<double>(r.outcome->backend_calls);
        ++ok;
      } else {
        ++row.failed;
      }
    }
    if (ok) row.mean_calls /= static_cast<double>(ok);
    auto samples = result.samples();
    if (!samples.empty()) {
      row.report = batch_report(samples);
      if (!kind) kind = row.report->kind;
    }
    any_failed = any_failed || result.any_failed();
    doc["variants"].push_back({{"variant", v},
                               {"effective_flags", row.effective.names()},
                               {"metrics", row.report ? row.report->to_json() : nlohmann::json::object()},
                               {"mean_backend_calls", row.mean_calls},
                               {"failed", row.failed},
                               {"runs", result.runs_json()}});
    rows.push_back(std::move(row));
  }

  for (const auto& r : rows) {
    std::string flags;
    for (const auto& n : r.effective.names()) flags += (flags.empty() ? "" : ",") + n;
    out << "# " << r.variant << ": effective flags " << (flags.empty() ? "(none)" : flags) << "\n";
  }
  const auto names = metric_names(kind.value_or(TaskKind::creative_writing));
  out << std::left << std::setw(16) << "variant";
  for (const auto& n : names) out << std::right << std::setw(8) << n;
  out << std::right << std::setw(8) << "calls" << std::setw(8) << "failed" << "\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(16) << r.variant << std::right;
    for (const auto& n : names) {
      if (r.report && r.report->metrics.contains(n)) out << std::setw(8) << fixed1(r.report->metrics.at(n).mean);
      else out << std::setw(8) << "-";
    }
    out << std::setw(8) << fixed1(r.mean_calls) << std::setw(8) << r.failed << "\n";
  }
  const auto path = root.reports_dir() / (batch_id + "-ablate.json");
  write_json_file(path, doc);
  out << "report: " << path.string() << "\n";
  return any_failed ? kExitBatchFailures : kExitOk;
}

inline int cmd_inspect_pool(const fs::path& path, std::ostream& out) {
  if (!fs::exists(path)) {
    out << "empty pool (" << path.string() << " does not exist)\n";
    return kExitOk;
  }
  auto pool = load(path);
  if (pool.empty()) {
    out << "empty pool\n";
    return kExitOk;
  }
  const auto newest = pool.entries().back().created_seq;
  for (const auto& e : pool.entries()) {
    out << "#" << e.created_seq << " age " << (newest - e.created_seq) << " run " << e.origin.run_id;
    if (e.origin.agent_index) out << " agent " << *e.origin.agent_index;
    if (e.origin.turn) out << " turn " << *e.origin.turn;
    out << "\n";
    for (const auto& line : text::split_lines(e.text)) out << "    " << line << "\n";
  }
  out << pool.size() << " entries\n";
  return kExitOk;
}

inline int cmd_inspect_transcript(const fs::path& path, const EventFilter& filter, std::ostream& out) {
  auto tr = Transcript::read(path);
  auto events = filter_events(tr.snapshot(), filter);
  for (const auto& e : events) {
    const auto& p = e.payload;
    out << std::setw(5) << e.seq << " " << std::left << std::setw(11) << e.event_kind << std::right;
    if (p.contains("call_kind")) out << " " << p["call_kind"].get<std::string>();
    if (p.contains("artifact")) out << " " << p["artifact"].get<std::string>();
    if (p.contains("crew")) out << " crew=" << p["crew"].dump();
    if (p.contains("reviewer")) out << " reviewer=" << p["reviewer"].dump();
    if (p.contains("turn")) out << " turn=" << p["turn"].dump();
    if (p.contains("text") && p["text"].is_string()) {
      auto t = p["text"].get<std::string>();
      auto first = text::split_lines(t);
      std::string preview = first.empty() ? "" : first.front();
      if (preview.size() > 72) preview = preview.substr(0, 72) + "...";
      out << " | " << preview;
    }
    if (p.contains("error")) out << " | " << p["error"].get<std::string>();
    out << "\n";
  }
  out << events.size() << " events\n";
  return kExitOk;
}

/// Accepts either a creative-writing task document or a bare array of alias
/// arrays.
inline std::vector<AnswerSet> load_answers(const fs::path& path) {
  auto doc = read_json_file(path);
  if (doc.is_object()) {
    auto task = validate_task(doc);
    if (task.kind != TaskKind::creative_writing)
      throw Error(ErrorCode::schema_error, "kind", "scoring needs a creative_writing task");
    return task.writing().answer_sets;
  }
  if (!doc.is_array() || doc.empty()) throw Error(ErrorCode::schema_error, "<root>", "expected array of alias arrays");
  std::vector<AnswerSet> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto path_i = "[" + std::to_string(i) + "]";
    if (!doc[i].is_array()) throw Error(ErrorCode::schema_error, path_i, "expected array of aliases");
    if (doc[i].empty()) throw Error(ErrorCode::empty_answer_set, path_i, "no aliases");
    AnswerSet set;
    for (const auto& a : doc[i]) {
      if (!a.is_string()) throw Error(ErrorCode::schema_error, path_i, "aliases must be strings");
      set.aliases.push_back(a.get<std::string>());
    }
    out.push_back(std::move(set));
  }
  return out;
}

inline int cmd_score(const fs::path& story_file, const fs::path& answers_file, bool word_boundary,
                     std::ostream& out) {
  auto story = read_text_file(story_file);
  auto answers = load_answers(answers_file);
  const auto mode = word_boundary ? MatchMode::word_boundary : MatchMode::substring;
  out << "M%: " << fixed1(match_rate(story, answers, mode)) << "\n";
  auto breakdown = match_breakdown(story, answers, mode);
  for (std::size_t i = 0; i < breakdown.size(); ++i) {
    out << "  Q" << (i + 1) << " ";
    if (breakdown[i].matched) out << "matched \"" << breakdown[i].matched_alias << "\"\n";
    else out << "unmatched\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hierarchical multi-agent orchestration with 360-degree review and experience pools", "rea"};
  app.require_subcommand(1);

  SharedOptions run_opts, batch_opts, ablate_opts;
  std::string task_file, tasks_file, batch_id, ablate_file, ablate_id;
  bool parallel = false;
  std::vector<std::string> variants;

  auto* run = app.add_subcommand("run", "Run one task");
  run->add_option("task", task_file, "Task JSON file")->required();
  run_opts.attach(run);

  auto* batch = app.add_subcommand("batch", "Run an array of tasks sharing one global pool");
  batch->add_option("tasks", tasks_file, "JSON array of tasks")->required();
  batch->add_flag("--parallel", parallel, "Run tasks concurrently (requires --fresh-pool)");
  batch->add_option("--batch-id", batch_id, "Report name (default: <file stem>-s<seed>)");
  batch_opts.attach(batch);

  auto* ablate = app.add_subcommand("ablate", "Run a batch once per ablation variant");
  ablate->add_option("tasks", ablate_file, "JSON array of tasks")->required();
  ablate->add_option("--variants", variants, "Variants (default: all)")->delimiter(',');
  ablate->add_option("--batch-id", ablate_id, "Report name (default: <file stem>-s<seed>)");
  ablate_opts.attach(ablate);

  std::string inspect_what, inspect_path, inspect_workspace = "workspace", inspect_kind;
  std::optional<int> inspect_crew, inspect_turn;
  auto* inspect = app.add_subcommand("inspect", "Show a pool file or a run transcript");
  inspect->add_option("what", inspect_what, "pool or transcript")
      ->required()
      ->check(CLI::IsMember({"pool", "transcript"}));
  inspect->add_option("path", inspect_path, "File to inspect (pool defaults to the workspace pool)");
  inspect->add_option("--workspace", inspect_workspace, "Workspace directory")->capture_default_str();
  inspect->add_option("--kind", inspect_kind, "Only completions of this call kind");
  inspect->add_option("--crew", inspect_crew, "Only events tagged with this crew index");
  inspect->add_option("--turn", inspect_turn, "Only events tagged with this turn");

  std::string story_file, answers_file;
  bool word_boundary = false;
  auto* score = app.add_subcommand("score", "Compute the match rate of a story");
  score->add_option("story", story_file, "Story text file")->required();
  score->add_option("answers", answers_file, "Task JSON or array of alias arrays")->required();
  score->add_flag("--word-boundary", word_boundary, "Require aliases to match whole words");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*run) return cmd_run(run_opts, task_file, out);
    if (*batch) return cmd_batch(batch_opts, tasks_file, parallel, batch_id, out, err);
    if (*ablate) return cmd_ablate(ablate_opts, ablate_file, variants, ablate_id, out, err);
    if (*inspect) {
      if (inspect_what == "pool")
        return cmd_inspect_pool(inspect_path.empty() ? Workspace{inspect_workspace}.pool_path() : fs::path(inspect_path),
                                out);
      if (inspect_path.empty()) throw Error(ErrorCode::config_error, "path", "transcript path required");
      EventFilter f;
      if (!inspect_kind.empty()) {
        if (!parse_call_kind(inspect_kind))
          throw Error(ErrorCode::config_error, "kind", "unknown call kind '" + inspect_kind + "'");
        f.call_kind = inspect_kind;
      }
      f.crew = inspect_crew;
      f.turn = inspect_turn;
      return cmd_inspect_transcript(inspect_path, f, out);
    }
    if (*score) return cmd_score(story_file, answers_file, word_boundary, out);
  } catch (const RunFailure& e) {
    err << "error at stage " << e.stage() << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitProtocol;
  }
  return kExitInput;
}

}  // namespace rea::cli
