#pragma once

// The run schedule:
//   decompose -> generate turn 0
//   -> for t in 1..T: assess turn t-1, reflect local experience, revise (turn t)
//   -> synthesize draft, leader self review, final answer
//   -> evaluate -> global experience -> persist pool and transcript.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rea/agents.hpp"
#include "rea/assessment.hpp"
#include "rea/backend.hpp"
#include "rea/domain.hpp"
#include "rea/experience.hpp"
#include "rea/metrics.hpp"
#include "rea/prompts.hpp"
#include "rea/transcript.hpp"

namespace rea {

inline constexpr const char* kGlobalSection = "Experience from previous tasks:";
inline constexpr const char* kLocalSection = "Your experience from earlier turns:";
inline constexpr const char* kPreviousResponseSection = "Your previous response:";
inline constexpr const char* kReviewSection = "Reviews of your previous response:";
inline constexpr const char* kDraftSection = "Your draft:";
inline constexpr const char* kLeaderReviewSection = "Your review of the draft:";

/// A run aborted at `stage`; carries the original error code.
class RunFailure : public Error {
 public:
  RunFailure(const Error& cause, std::string stage) : Error(cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Directory holding the global pool, run transcripts and batch reports.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path pool_path() const { return root / "experience_pool.json"; }
  std::filesystem::path runs_dir() const { return root / "runs"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path transcript_path(const std::string& run_id) const {
    return runs_dir() / (run_id + ".jsonl");
  }
  std::filesystem::path summary_path(const std::string& run_id) const {
    return runs_dir() / (run_id + ".summary.json");
  }
};

struct RunOptions {
  // Start from an empty global pool instead of the workspace file. New
  // global experiences are still appended to the workspace file.
  bool fresh_pool = false;
  std::optional<std::string> run_id;
};

struct RunOutcome {
  std::string run_id;
  std::string task_id;
  TaskKind task_kind = TaskKind::creative_writing;
  std::vector<SubTaskInstruction> instructions;
  std::string final_answer;
  EvaluationReport evaluation;
  std::map<std::string, double> metrics;
  std::uint64_t backend_calls = 0;
  std::vector<Experience> global_added;
  std::map<int, std::vector<Experience>> local_pools;
  Transcript transcript;

  MetricSample sample() const { return {task_kind, metrics}; }

  bool operator==(const RunOutcome& o) const {
    return run_id == o.run_id && task_id == o.task_id && task_kind == o.task_kind &&
           instructions == o.instructions && final_answer == o.final_answer && evaluation == o.evaluation &&
           metrics == o.metrics && backend_calls == o.backend_calls && global_added == o.global_added &&
           local_pools == o.local_pools && transcript.to_jsonl() == o.transcript.to_jsonl();
  }

  nlohmann::json summary() const {
    nlohmann::json local = nlohmann::json::object();
    for (const auto& [crew, entries] : local_pools) local[std::to_string(crew)] = entries.size();
    return {{"run_id", run_id},
            {"task_id", task_id},
            {"task_kind", to_string(task_kind)},
            {"roles", [&] {
               nlohmann::json roles = nlohmann::json::array();
               for (const auto& i : instructions) roles.push_back(i.role_name);
               return roles;
             }()},
            {"final_answer", final_answer},
            {"evaluation", evaluation},
            {"metrics", metrics},
            {"backend_calls", backend_calls},
            {"pool_delta", {{"global_added", global_added}, {"local_entries", local}}}};
  }
};

/// Closed-form number of backend calls a successful run makes.
inline std::uint64_t expected_call_count(int crews, int turns, const Ablations& ablations) {
  const auto eff = ablations.effective();
  const std::uint64_t n = static_cast<std::uint64_t>(crews);
  const std::uint64_t t = static_cast<std::uint64_t>(turns);
  std::uint64_t calls = 1;                                      // decompose
  calls += n * (t + 1);                                         // generation passes
  calls += t * static_cast<std::uint64_t>(assessment::round_call_count(crews, eff));
  if (!eff.no_360 && !eff.no_local_exp) calls += t * n;         // local reflection
  calls += eff.no_360 ? 2 : 3;                                  // draft, [leader_self], final
  calls += 1;                                                   // evaluate
  if (!eff.no_global_exp) calls += 1;                           // global experience
  return calls;
}

namespace detail {

inline std::string_view strip_list_marker(std::string_view l) {
  l = text::trim(l);
  std::size_t i = 0;
  while (i < l.size() && l[i] >= '0' && l[i] <= '9') ++i;
  if (i > 0 && i < l.size() && (l[i] == '.' || l[i] == ')')) l.remove_prefix(i + 1);
  l = text::trim(l);
  while (!l.empty() && (l.front() == '-' || l.front() == '*' || l.front() == '#')) l.remove_prefix(1);
  return text::trim(l);
}

/// If `line` is "<label>: value" (case-insensitive, emphasis tolerated),
/// returns the value.
inline std::optional<std::string> labelled(std::string_view line, std::string_view label) {
  auto l = strip_list_marker(line);
  if (l.size() < label.size() || text::to_lower(l.substr(0, label.size())) != label) return std::nullopt;
  auto rest = l.substr(label.size());
  while (!rest.empty() && (rest.front() == '*' || rest.front() == ' ')) rest.remove_prefix(1);
  if (rest.empty() || rest.front() != ':') return std::nullopt;
  rest.remove_prefix(1);
  while (!rest.empty() && (rest.front() == '*' || text::is_space(rest.front()))) rest.remove_prefix(1);
  while (!rest.empty() && (rest.back() == '*' || text::is_space(rest.back()))) rest.remove_suffix(1);
  return std::string(rest);
}

}  // namespace detail

/// Parses the leader's numbered "Role: / Instruction:" blocks. Does not
/// check the crew-count range.
inline std::vector<SubTaskInstruction> parse_decomposition(const std::string& output) {
  std::vector<SubTaskInstruction> out;
  bool in_instruction = false;
  for (const auto& line : text::split_lines(output)) {
    if (auto role = detail::labelled(line, "role")) {
      out.push_back({static_cast<int>(out.size()) + 1, *role, {}});
      in_instruction = false;
      continue;
    }
    if (auto instr = detail::labelled(line, "instruction")) {
      if (out.empty()) throw Error(ErrorCode::parse_error, "decompose", "Instruction before any Role");
      if (!out.back().instruction_text.empty())
        throw Error(ErrorCode::parse_error, "decompose", "two instructions for one role");
      out.back().instruction_text = *instr;
      in_instruction = true;
      continue;
    }
    if (in_instruction && !text::trim(line).empty()) {
      auto& t = out.back().instruction_text;
      t += (t.empty() ? "" : "\n") + std::string(text::trim(line));
    }
  }
  if (out.empty()) throw Error(ErrorCode::parse_error, "decompose", "no Role/Instruction blocks found");
  std::set<std::string> names;
  for (const auto& s : out) {
    if (text::trim(s.role_name).empty())
      throw Error(ErrorCode::parse_error, "decompose", "empty role name for crew " + std::to_string(s.crew_index));
    if (text::trim(s.instruction_text).empty())
      throw Error(ErrorCode::parse_error, "decompose", "missing instruction for role '" + s.role_name + "'");
    if (!names.insert(text::normalize(s.role_name)).second)
      throw Error(ErrorCode::parse_error, "decompose", "duplicate role '" + s.role_name + "'");
  }
  return out;
}

class Orchestrator {
 public:
  Orchestrator(const Backend& backend, const PromptRegistry& prompts, RunConfig config)
      : backend_(backend), prompts_(prompts), config_(std::move(config)) {
    config_.validate();
  }

  const RunConfig& config() const { return config_; }

  // -------------------------------------------------------------------------
  // Stages. Each takes the gateway of the run in progress.

  std::vector<SubTaskInstruction> decompose(Gateway& gw, const TaskQuery& task) const {
    const std::string min = std::to_string(config_.crew_min);
    const std::string max = std::to_string(config_.crew_max);
    auto first = prompts_.render(TemplateId::decompose,
                                 {{"task", render_task_text(task)}, {"crew_min", min}, {"crew_max", max}});
    auto req = agents::make_request(config_, CallKind::decompose, agents::leader_persona(), first);

    constexpr int kReparseAttempts = 2;
    std::optional<Error> last;
    for (int attempt = 0; attempt <= kReparseAttempts; ++attempt) {
      auto res = gw.complete(req);
      try {
        auto parsed = parse_decomposition(res.text);
        const int n = static_cast<int>(parsed.size());
        if (n < config_.crew_min || n > config_.crew_max)
          throw Error(ErrorCode::crew_count_error, std::to_string(n),
                      "crew count must be from " + min + " to " + max);
        return parsed;
      } catch (const Error& e) {
        last = e;
      }
      // Re-prompt with the previous answer and a format reminder.
      req.messages.resize(2);
      req.messages.push_back({Role::assistant, res.text});
      req.messages.push_back(
          {Role::user, "Your answer could not be used (" + std::string(last->what()) +
                           "). Reply again with from " + min + " to " + max +
                           " numbered blocks, each exactly:\n1. Role: <role name>\nInstruction: <instruction>"});
    }
    throw *last;
  }

  CompletionRequest generation_request(const TaskQuery& task, const SubTaskInstruction& instruction, int turn,
                                       std::span<const Experience> global_sel, std::span<const Experience> local,
                                       const TurnResponse* previous, const ReviewSet* prior_reviews) const {
    if (turn == 0 && (previous || prior_reviews))
      throw Error(ErrorCode::cardinality_error, "turn", "turn 0 has no prior response or reviews");
    const auto eff = config_.ablations.effective();
    std::string context;
    if (!eff.no_global_exp && !global_sel.empty())
      context += "\n" + std::string(kGlobalSection) + "\n" + format_experiences(global_sel) + "\n";
    if (!eff.no_local_exp && !local.empty())
      context += "\n" + std::string(kLocalSection) + "\n" + format_experiences(local) + "\n";
    if (previous) context += "\n" + std::string(kPreviousResponseSection) + "\n" + previous->text + "\n";
    if (prior_reviews && !prior_reviews->empty())
      context += "\n" + std::string(kReviewSection) + "\n" + assessment::format_reviews(*prior_reviews) + "\n";
    auto user = prompts_.render(TemplateId::crew_generate, {{"role", instruction.role_name},
                                                            {"task", render_task_text(task)},
                                                            {"instruction", instruction.instruction_text},
                                                            {"context", context}});
    return agents::make_request(config_, CallKind::generate, agents::crew_persona(instruction.role_name),
                                std::move(user), instruction.crew_index, std::nullopt, turn);
  }

  TurnResponse generate_response(Gateway& gw, const TaskQuery& task, const SubTaskInstruction& instruction,
                                 int turn, std::span<const Experience> global_sel,
                                 std::span<const Experience> local, const TurnResponse* previous,
                                 const ReviewSet* prior_reviews) const {
    auto res = gw.complete(generation_request(task, instruction, turn, global_sel, local, previous, prior_reviews));
    return response_from(instruction.crew_index, turn, std::move(res.text));
  }

  /// Draft, leader self review (unless no_360), final revision.
  std::string synthesize(Gateway& gw, const TaskQuery& task, std::span<const TurnResponse> final_responses,
                         std::span<const SubTaskInstruction> instructions,
                         std::span<const Experience> global_sel, Transcript* transcript = nullptr) const {
    const auto eff = config_.ablations.effective();
    const auto task_text = render_task_text(task);
    const auto responses = format_final_responses(final_responses, instructions);
    std::string global_ctx;
    if (!eff.no_global_exp && !global_sel.empty())
      global_ctx = "\n" + std::string(kGlobalSection) + "\n" + format_experiences(global_sel) + "\n";

    auto draft_user = prompts_.render(TemplateId::synthesize,
                                      {{"task", task_text}, {"responses", responses}, {"context", global_ctx}});
    auto draft = gw.complete(agents::make_request(config_, CallKind::synthesize_draft, agents::leader_persona(),
                                                  std::move(draft_user)))
                     .text;
    if (transcript) record(*transcript, "draft_answer", {{"text", draft}});

    std::string final_ctx = global_ctx + "\n" + kDraftSection + "\n" + draft + "\n";
    if (!eff.no_360) {
      auto review_user = prompts_.render(TemplateId::leader_self, {{"task", task_text}, {"draft", draft}});
      auto req = agents::make_request(config_, CallKind::leader_self, agents::leader_persona(),
                                      std::move(review_user), kLeaderIndex, kLeaderIndex);
      auto review = assessment::review_from(req, gw.complete(req).text);
      if (transcript) record(*transcript, "review", nlohmann::json(review));
      final_ctx += "\n" + std::string(kLeaderReviewSection) + "\n" + review.text + "\n";
    }
    auto final_user = prompts_.render(TemplateId::synthesize,
                                      {{"task", task_text}, {"responses", responses}, {"context", final_ctx}});
    return gw.complete(agents::make_request(config_, CallKind::synthesize_final, agents::leader_persona(),
                                            std::move(final_user)))
        .text;
  }

  // -------------------------------------------------------------------------

  RunOutcome run_task(const TaskQuery& task, const Workspace& ws, const RunOptions& opts = {}) const {
    const auto eff = config_.ablations.effective();
    RunOutcome out;
    out.task_id = task.task_id;
    out.task_kind = task.kind;
    out.run_id = opts.run_id ? *opts.run_id : allocate_run_id(ws, task);
    out.transcript = Transcript(out.run_id);
    Transcript& tr = out.transcript;
    Gateway gw(backend_, tr, config_.max_parallel);
    std::string stage = "load_pool";

    tr.append(event_kind::run_start, {{"run_id", out.run_id},
                                      {"task_id", task.task_id},
                                      {"task", task_to_json(task)},
                                      {"config", config_},
                                      {"backend", to_string(backend_.kind())}});
    try {
      ExperiencePool global = opts.fresh_pool ? ExperiencePool() : load_or_empty(ws.pool_path());
      std::vector<Experience> global_sel;
      if (!eff.no_global_exp) global_sel = select_global(global, config_.global_select_k);
      record(tr, "global_selection", {{"entries", global_sel}});

      stage = "decompose";
      out.instructions = decompose(gw, task);
      record(tr, "instructions", {{"instructions", out.instructions}});
      const int n = static_cast<int>(out.instructions.size());

      std::map<int, ExperiencePool> local;
      for (const auto& i : out.instructions) local.emplace(i.crew_index, ExperiencePool(ExperienceLevel::local));

      stage = "generate";
      std::vector<TurnResponse> current = generate_all(gw, task, out.instructions, 0, global_sel, local, {}, {});
      for (const auto& r : current) record(tr, "response", nlohmann::json(r), r.crew_index, r.turn);

      for (int t = 1; t <= config_.turns; ++t) {
        std::vector<ReviewSet> reviews;
        if (!eff.no_360) {
          stage = "assess";
          assessment::Context ctx{gw, prompts_, config_};
          reviews = assessment::run_round(ctx, t - 1, out.instructions, current);
          for (const auto& s : reviews) record(tr, "review_set", nlohmann::json(s), s.crew_index, s.turn);

          if (!eff.no_local_exp) {
            stage = "local_experience";
            std::vector<CompletionRequest> reqs;
            for (int i = 0; i < n; ++i) {
              const auto& ins = out.instructions[i];
              reqs.push_back(local_experience_request(prompts_, config_, ins.crew_index, ins.role_name, reviews[i],
                                                      local.at(ins.crew_index).entries()));
            }
            auto results = gw.complete_all(reqs);
            for (int i = 0; i < n; ++i) {
              const int crew = out.instructions[i].crew_index;
              const auto& e = local.at(crew).add(local_experience_from(out.run_id, crew, t - 1, results[i].text));
              record(tr, "local_experience", nlohmann::json(e), crew, t - 1);
            }
          }
        }
        stage = "generate";
        current = generate_all(gw, task, out.instructions, t, global_sel, local, current, reviews);
        for (const auto& r : current) record(tr, "response", nlohmann::json(r), r.crew_index, r.turn);
      }

      stage = "synthesize";
      out.final_answer = synthesize(gw, task, current, out.instructions, global_sel, &tr);
      record(tr, "final_answer", {{"text", out.final_answer}});

      stage = "evaluate";
      out.evaluation = evaluate_rubric(gw, prompts_, task, out.final_answer, rubric_for(task.kind), config_);
      record(tr, "evaluation", nlohmann::json(out.evaluation));
      out.metrics = compute_metrics(task, out.final_answer, out.evaluation);
      record(tr, "metrics", {{"metrics", out.metrics}});

      std::vector<Experience> fresh;
      if (!eff.no_global_exp) {
        stage = "global_experience";
        ExperiencePool scratch = global;
        fresh.push_back(build_global_experience(gw, prompts_, config_, out.run_id, out.evaluation, current, scratch));
      }
      out.backend_calls = gw.calls();

      stage = "persist";
      if (!fresh.empty()) {
        out.global_added = append_global(ws.pool_path(), std::move(fresh));
        for (const auto& e : out.global_added) record(tr, "global_experience", nlohmann::json(e));
      }
      for (const auto& [crew, pool] : local) out.local_pools[crew] = pool.entries();

      tr.append(event_kind::run_end, {{"run_id", out.run_id}, {"summary", out.summary()}});
      tr.write(ws.transcript_path(out.run_id));
      write_summary(ws.summary_path(out.run_id), out.summary());
      return out;
    } catch (const std::exception& e) {
      const auto* err = dynamic_cast<const Error*>(&e);
      Error cause = err ? *err : Error(ErrorCode::parse_error, stage, e.what());
      tr.append(event_kind::run_failed, {{"run_id", out.run_id},
                                         {"stage", stage},
                                         {"code", to_string(cause.code())},
                                         {"error", cause.what()}});
      try {
        tr.write(ws.transcript_path(out.run_id));
      } catch (const std::exception&) {
        // The original failure is more useful than a secondary write error.
      }
      throw RunFailure(cause, stage);
    }
  }

  static std::map<std::string, double> compute_metrics(const TaskQuery& task, const std::string& answer,
                                                       const EvaluationReport& evaluation) {
    std::map<std::string, double> m;
    if (task.kind == TaskKind::creative_writing) m["M%"] = match_rate(answer, task.writing().answer_sets);
    for (const auto& c : evaluation.criteria) m[c.name] = normalize_score(c.score);
    return m;
  }

 private:
  static TurnResponse response_from(int crew, int turn, std::string text) {
    if (text.empty())
      throw Error(ErrorCode::parse_error, "generate",
                  "empty response from crew " + std::to_string(crew) + " at turn " + std::to_string(turn));
    return {crew, turn, std::move(text)};
  }

  std::vector<TurnResponse> generate_all(Gateway& gw, const TaskQuery& task,
                                         const std::vector<SubTaskInstruction>& instructions, int turn,
                                         const std::vector<Experience>& global_sel,
                                         const std::map<int, ExperiencePool>& local,
                                         const std::vector<TurnResponse>& previous,
                                         const std::vector<ReviewSet>& reviews) const {
    std::vector<CompletionRequest> reqs;
    for (std::size_t i = 0; i < instructions.size(); ++i) {
      const auto& ins = instructions[i];
      const TurnResponse* prev = turn > 0 ? &previous.at(i) : nullptr;
      const ReviewSet* rev = turn > 0 && i < reviews.size() ? &reviews[i] : nullptr;
      reqs.push_back(generation_request(task, ins, turn, global_sel, local.at(ins.crew_index).entries(), prev, rev));
    }
    auto results = gw.complete_all(reqs);
    std::vector<TurnResponse> out;
    for (std::size_t i = 0; i < instructions.size(); ++i)
      out.push_back(response_from(instructions[i].crew_index, turn, std::move(results[i].text)));
    return out;
  }

  static void record(Transcript& tr, const std::string& artifact, nlohmann::json body,
                     std::optional<int> crew = std::nullopt, std::optional<int> turn = std::nullopt) {
    nlohmann::json p{{"artifact", artifact}, {"data", std::move(body)}};
    if (crew) p["crew"] = *crew;
    if (turn) p["turn"] = *turn;
    tr.append(event_kind::artifact, std::move(p));
  }

  std::string allocate_run_id(const Workspace& ws, const TaskQuery& task) const {
    const std::string base = task.task_id + "-s" + std::to_string(config_.seed);
    std::string id = base;
    for (int k = 2; std::filesystem::exists(ws.transcript_path(id)); ++k) id = base + "-" + std::to_string(k);
    return id;
  }

  static void write_summary(const std::filesystem::path& path, const nlohmann::json& summary) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, path.string(), "cannot write run summary");
    out << summary.dump(2) << "\n";
  }

  const Backend& backend_;
  const PromptRegistry& prompts_;
  RunConfig config_;
};

}  // namespace rea
