#pragma once

// Dual-level experience pools. Local pools live for one run and belong to
// one crew agent; the global pool is shared by every run in a workspace and
// persisted as experience_pool.json.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "rea/agents.hpp"
#include "rea/assessment.hpp"
#include "rea/backend.hpp"
#include "rea/domain.hpp"
#include "rea/prompts.hpp"

namespace rea {

/// Append-only list of experiences of one level with strictly increasing
/// created_seq.
class ExperiencePool {
 public:
  explicit ExperiencePool(ExperienceLevel level = ExperienceLevel::global) : level_(level) {}

  ExperienceLevel level() const { return level_; }
  const std::vector<Experience>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t next_seq() const { return entries_.empty() ? 0 : entries_.back().created_seq + 1; }

  /// Appends with the next created_seq.
  const Experience& add(Experience e) {
    e.created_seq = next_seq();
    push(std::move(e));
    return entries_.back();
  }

  /// Appends an entry that already carries its created_seq.
  void push(Experience e) {
    check_entry(e, entries_.size());
    if (!entries_.empty() && e.created_seq <= entries_.back().created_seq)
      throw Error(ErrorCode::corrupt_pool, std::to_string(entries_.size()), "created_seq not increasing");
    entries_.push_back(std::move(e));
  }

  bool operator==(const ExperiencePool&) const = default;

 private:
  void check_entry(const Experience& e, std::size_t index) const {
    auto where = std::to_string(index);
    if (e.level != level_) throw Error(ErrorCode::corrupt_pool, where, "entry level does not match pool level");
    if (e.text.empty()) throw Error(ErrorCode::corrupt_pool, where, "empty experience text");
    bool scoped = e.origin.agent_index.has_value() && e.origin.turn.has_value();
    bool unscoped = !e.origin.agent_index && !e.origin.turn;
    if (e.level == ExperienceLevel::local && !scoped)
      throw Error(ErrorCode::corrupt_pool, where, "local experience needs agent_index and turn");
    if (e.level == ExperienceLevel::global && !unscoped)
      throw Error(ErrorCode::corrupt_pool, where, "global experience must not carry agent_index or turn");
  }

  ExperienceLevel level_;
  std::vector<Experience> entries_;
};

/// The min(k, |pool|) most recent entries, oldest first.
inline std::vector<Experience> select_global(const ExperiencePool& pool, int k) {
  const auto& e = pool.entries();
  auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), e.size());
  return {e.end() - static_cast<std::ptrdiff_t>(take), e.end()};
}

inline std::string format_experiences(std::span<const Experience> list) {
  std::string out;
  for (const auto& e : list) {
    if (!out.empty()) out += "\n";
    out += "- " + e.text;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json pool_to_json(const ExperiencePool& pool) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : pool.entries()) arr.push_back(e);
  return arr;
}

inline ExperiencePool pool_from_json(const nlohmann::json& doc, ExperienceLevel level = ExperienceLevel::global) {
  if (!doc.is_array()) throw Error(ErrorCode::corrupt_pool, "<root>", "pool file must be an array");
  ExperiencePool pool(level);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& j = doc[i];
    auto where = std::to_string(i);
    auto bad = [&](const std::string& why) { return Error(ErrorCode::corrupt_pool, where, why); };
    if (!j.is_object()) throw bad("entry is not an object");
    if (!j.contains("level") || !j["level"].is_string()) throw bad("missing level");
    if (!j.contains("text") || !j["text"].is_string()) throw bad("missing text");
    if (!j.contains("created_seq") || !j["created_seq"].is_number_unsigned()) throw bad("missing created_seq");
    if (!j.contains("origin") || !j["origin"].is_object()) throw bad("missing origin");
    const auto& o = j["origin"];
    if (!o.contains("run_id") || !o["run_id"].is_string()) throw bad("missing origin.run_id");

    Experience e;
    auto lvl = j["level"].get<std::string>();
    if (lvl == "local") e.level = ExperienceLevel::local;
    else if (lvl == "global") e.level = ExperienceLevel::global;
    else throw bad("unknown level '" + lvl + "'");
    e.text = j["text"].get<std::string>();
    e.created_seq = j["created_seq"].get<std::uint64_t>();
    e.origin.run_id = o["run_id"].get<std::string>();
    if (o.contains("agent_index")) {
      if (!o["agent_index"].is_number_integer()) throw bad("origin.agent_index must be an integer");
      e.origin.agent_index = o["agent_index"].get<int>();
    }
    if (o.contains("turn")) {
      if (!o["turn"].is_number_integer()) throw bad("origin.turn must be an integer");
      e.origin.turn = o["turn"].get<int>();
    }
    pool.push(std::move(e));
  }
  return pool;
}

inline void persist(const ExperiencePool& pool, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, tmp.string(), "cannot write pool");
    out << pool_to_json(pool).dump(2) << "\n";
    if (!out) throw Error(ErrorCode::io_error, tmp.string(), "write failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io_error, path.string(), ec.message());
}

inline ExperiencePool load(const std::filesystem::path& path, ExperienceLevel level = ExperienceLevel::global) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, path.string(), "cannot open pool file");
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::corrupt_pool, "<root>", path.string() + " is not valid JSON");
  return pool_from_json(doc, level);
}

/// Loads the workspace pool, treating a missing file as an empty pool.
inline ExperiencePool load_or_empty(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return ExperiencePool(ExperienceLevel::global);
  return load(path);
}

/// Exclusive advisory lock on `<path>.lock`, held for the object's lifetime.
class PoolFileLock {
 public:
  explicit PoolFileLock(const std::filesystem::path& pool_path) {
    auto lock_path = pool_path;
    lock_path += ".lock";
    std::error_code ec;
    if (lock_path.has_parent_path()) std::filesystem::create_directories(lock_path.parent_path(), ec);
    fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::io_error, lock_path.string(), "cannot open lock file");
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::io_error, lock_path.string(), "cannot lock pool");
    }
  }
  ~PoolFileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  PoolFileLock(const PoolFileLock&) = delete;
  PoolFileLock& operator=(const PoolFileLock&) = delete;

 private:
  int fd_ = -1;
};

/// Appends global experiences to the pool file under the file lock,
/// re-reading it first so concurrent writers never lose entries. Returns the
/// appended entries with their assigned created_seq.
inline std::vector<Experience> append_global(const std::filesystem::path& path, std::vector<Experience> fresh) {
  PoolFileLock lock(path);
  auto pool = load_or_empty(path);
  std::vector<Experience> added;
  for (auto& e : fresh) added.push_back(pool.add(std::move(e)));
  persist(pool, path);
  return added;
}

// ---------------------------------------------------------------------------
// Building experiences

inline constexpr const char* kNoPriorExperience = "(none)";

struct LocalExperienceText {
  std::string text;
  bool parse_warning = false;
};

/// Pulls the text after the "Experience:" label out of a structured
/// "Role: ... / Experience: ..." answer. Falls back to the raw text with a
/// warning flag when the label is missing.
inline LocalExperienceText parse_local_experience(const std::string& output) {
  auto lines = text::split_lines(output);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view l = text::trim(lines[i]);
    while (!l.empty() && (l.front() == '*' || l.front() == '-' || l.front() == '#')) l.remove_prefix(1);
    l = text::trim(l);
    std::string lower = text::to_lower(l.substr(0, std::min<std::size_t>(l.size(), 11)));
    if (!lower.starts_with("experience")) continue;
    auto colon = l.find(':');
    if (colon == std::string_view::npos) continue;
    auto rest = l.substr(colon + 1);
    while (!rest.empty() && rest.front() == '*') rest.remove_prefix(1);
    std::string body(text::trim(rest));
    for (std::size_t k = i + 1; k < lines.size(); ++k) {
      auto more = text::trim(lines[k]);
      if (more.empty()) continue;
      if (text::to_lower(more).starts_with("role:")) break;
      body += (body.empty() ? "" : "\n") + std::string(more);
    }
    if (!body.empty()) return {body, false};
  }
  return {std::string(text::trim(output)), true};
}

inline CompletionRequest local_experience_request(const PromptRegistry& prompts, const RunConfig& config,
                                                  int agent_index, const std::string& role_name,
                                                  const ReviewSet& reviews, std::span<const Experience> prior) {
  if (reviews.crew_index != agent_index)
    throw Error(ErrorCode::invalid_pair, std::to_string(agent_index), "review set belongs to another agent");
  auto pre = prior.empty() ? std::string(kNoPriorExperience) : format_experiences(prior);
  auto user = prompts.render(TemplateId::local_experience, {{"role", role_name},
                                                            {"peer_feedback", assessment::format_reviews(reviews)},
                                                            {"pre_exp", pre}});
  return agents::make_request(config, CallKind::local_exp, agents::crew_persona(role_name), std::move(user),
                              agent_index, std::nullopt, reviews.turn);
}

inline Experience local_experience_from(const std::string& run_id, int agent_index, int turn,
                                        const std::string& output) {
  auto parsed = parse_local_experience(output);
  Experience e;
  e.level = ExperienceLevel::local;
  e.text = parsed.text.empty() ? std::string("(empty)") : parsed.text;
  e.parse_warning = parsed.parse_warning || parsed.text.empty();
  e.origin = {run_id, agent_index, turn};
  return e;
}

/// One reflection call for one crew agent after an assessment round; the
/// result is appended to that agent's local pool.
inline const Experience& build_local_experience(Gateway& gateway, const PromptRegistry& prompts,
                                                const RunConfig& config, const std::string& run_id,
                                                int agent_index, const std::string& role_name,
                                                const ReviewSet& reviews, ExperiencePool& local_pool) {
  auto req = local_experience_request(prompts, config, agent_index, role_name, reviews, local_pool.entries());
  auto res = gateway.complete(std::move(req));
  return local_pool.add(local_experience_from(run_id, agent_index, reviews.turn, res.text));
}

inline std::string format_final_responses(std::span<const TurnResponse> responses,
                                          std::span<const SubTaskInstruction> instructions = {}) {
  std::string out;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (!out.empty()) out += "\n\n";
    out += "[Crew agent " + std::to_string(responses[i].crew_index);
    if (i < instructions.size()) out += ": " + instructions[i].role_name;
    out += "]\n" + responses[i].text;
  }
  return out;
}

inline CompletionRequest global_experience_request(const PromptRegistry& prompts, const RunConfig& config,
                                                   const EvaluationReport& evaluation,
                                                   std::span<const TurnResponse> final_responses) {
  auto user = prompts.render(TemplateId::global_experience,
                             {{"Final_Res", format_final_responses(final_responses)},
                              {"evaluation", evaluation.overall_text}});
  return agents::make_request(config, CallKind::global_exp, agents::leader_persona(), std::move(user));
}

/// The leader's task-level lesson, distilled from the evaluator report and
/// the final crew responses. Appended to `pool` in memory only.
inline const Experience& build_global_experience(Gateway& gateway, const PromptRegistry& prompts,
                                                 const RunConfig& config, const std::string& run_id,
                                                 const EvaluationReport& evaluation,
                                                 std::span<const TurnResponse> final_responses,
                                                 ExperiencePool& pool) {
  auto res = gateway.complete(global_experience_request(prompts, config, evaluation, final_responses));
  Experience e;
  e.level = ExperienceLevel::global;
  e.text = std::string(text::trim(res.text));
  if (e.text.empty()) throw Error(ErrorCode::parse_error, "global_exp", "empty global experience");
  e.origin.run_id = run_id;
  return pool.add(std::move(e));
}

}  // namespace rea
