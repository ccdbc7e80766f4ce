#pragma once

// Shared vocabulary: tasks, agents, reviews, experiences, reports and the
// run configuration. Every value here is immutable once validated.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rea/error.hpp"
#include "rea/text.hpp"

namespace rea {

using json = nlohmann::json;

enum class TaskKind { creative_writing, travel_plan };

constexpr std::string_view to_string(TaskKind k) {
  return k == TaskKind::creative_writing ? "creative_writing" : "travel_plan";
}

/// Acceptable surface forms of one ground-truth answer.
struct AnswerSet {
  std::vector<std::string> aliases;
  bool operator==(const AnswerSet&) const = default;
};

struct CreativeWritingTask {
  std::string topic;
  std::vector<std::string> questions;
  std::vector<AnswerSet> answer_sets;
  bool operator==(const CreativeWritingTask&) const = default;
};

struct TravelMembers {
  int adults = 0;
  int children = 0;
  bool operator==(const TravelMembers&) const = default;
};

struct TravelPlanTask {
  std::string destination;
  int days = 1;
  std::string description;
  std::string season;
  std::string month;
  std::vector<std::string> interests;
  TravelMembers members;
  std::string preferences;
  std::string budget_range;
  bool operator==(const TravelPlanTask&) const = default;
};

struct TaskQuery {
  TaskKind kind = TaskKind::creative_writing;
  std::string task_id;
  std::variant<CreativeWritingTask, TravelPlanTask> payload;

  const CreativeWritingTask& writing() const { return std::get<CreativeWritingTask>(payload); }
  const TravelPlanTask& travel() const { return std::get<TravelPlanTask>(payload); }
  bool operator==(const TaskQuery&) const = default;
};

enum class AgentKind { leader, crew, evaluator };

/// Index 0 is the leader, 1..N are crew agents.
struct AgentRole {
  int index = 0;
  std::string role_name;
  AgentKind kind = AgentKind::crew;
};

inline constexpr int kLeaderIndex = 0;

struct SubTaskInstruction {
  int crew_index = 1;
  std::string role_name;
  std::string instruction_text;
  bool operator==(const SubTaskInstruction&) const = default;
};

struct TurnResponse {
  int crew_index = 1;
  int turn = 0;
  std::string text;
  bool operator==(const TurnResponse&) const = default;
};

enum class ReviewKind { self, peer, supervisory, leader_self };

constexpr std::string_view to_string(ReviewKind k) {
  switch (k) {
    case ReviewKind::self: return "self";
    case ReviewKind::peer: return "peer";
    case ReviewKind::supervisory: return "supervisory";
    case ReviewKind::leader_self: return "leader_self";
  }
  return "?";
}

struct Review {
  ReviewKind kind = ReviewKind::self;
  int reviewer = 0;
  int reviewee = 0;
  int turn = 0;
  std::string text;
  bool operator==(const Review&) const = default;
};

/// Throws schema_error if the reviewer/reviewee pairing is illegal for the kind.
inline void check_review(const Review& r) {
  if (r.text.empty()) throw Error(ErrorCode::schema_error, "review.text", "empty review text");
  bool ok = false;
  switch (r.kind) {
    case ReviewKind::self: ok = r.reviewer == r.reviewee && r.reviewer >= 1; break;
    case ReviewKind::peer: ok = r.reviewer != r.reviewee && r.reviewer >= 1 && r.reviewee >= 1; break;
    case ReviewKind::supervisory: ok = r.reviewer == kLeaderIndex && r.reviewee >= 1; break;
    case ReviewKind::leader_self: ok = r.reviewer == kLeaderIndex && r.reviewee == kLeaderIndex; break;
  }
  if (!ok) {
    throw Error(ErrorCode::schema_error, std::string(to_string(r.kind)),
                "illegal reviewer/reviewee pair " + std::to_string(r.reviewer) + "->" +
                    std::to_string(r.reviewee));
  }
}

/// All reviews targeting one crew agent for one turn. Disabled kinds are
/// absent (nullopt / empty peer list), never placeholder text.
struct ReviewSet {
  int crew_index = 1;
  int turn = 0;
  std::optional<Review> self_review;
  std::vector<Review> peer_reviews;
  std::optional<Review> supervisory_review;

  bool empty() const { return !self_review && peer_reviews.empty() && !supervisory_review; }

  /// Canonical order: self, peers by reviewer ascending, supervisory.
  std::vector<const Review*> ordered() const {
    std::vector<const Review*> out;
    if (self_review) out.push_back(&*self_review);
    for (const auto& p : peer_reviews) out.push_back(&p);
    if (supervisory_review) out.push_back(&*supervisory_review);
    return out;
  }
  bool operator==(const ReviewSet&) const = default;
};

enum class ExperienceLevel { local, global };

constexpr std::string_view to_string(ExperienceLevel l) {
  return l == ExperienceLevel::local ? "local" : "global";
}

struct ExperienceOrigin {
  std::string run_id;
  std::optional<int> agent_index;
  std::optional<int> turn;
  bool operator==(const ExperienceOrigin&) const = default;
};

struct Experience {
  ExperienceLevel level = ExperienceLevel::global;
  std::string text;
  ExperienceOrigin origin;
  std::uint64_t created_seq = 0;
  // Set when the model output lacked the "Experience:" line and the raw
  // text was stored instead. Never persisted.
  bool parse_warning = false;
  bool operator==(const Experience&) const = default;
};

struct CriterionScore {
  std::string name;
  int score = 1;
  std::string rationale;
  bool operator==(const CriterionScore&) const = default;
};

/// Evaluator output m: parsed scores plus the raw text.
struct EvaluationReport {
  std::vector<CriterionScore> criteria;
  std::string overall_text;

  std::optional<int> score_of(std::string_view name) const {
    for (const auto& c : criteria)
      if (c.name == name) return c.score;
    return std::nullopt;
  }
  bool operator==(const EvaluationReport&) const = default;
};

// ---------------------------------------------------------------------------
// Run configuration

struct Ablations {
  bool no_exp_pool = false;
  bool no_360 = false;
  bool no_peer = false;
  bool no_self = false;
  bool no_supervisory = false;
  bool no_global_exp = false;
  bool no_local_exp = false;

  /// Applies flag implications: no_exp_pool disables both pool levels,
  /// no_360 disables every assessment level, and disabling every level
  /// individually is the same as no_360.
  Ablations effective() const {
    Ablations e = *this;
    if (e.no_exp_pool) e.no_global_exp = e.no_local_exp = true;
    if (e.no_self && e.no_peer && e.no_supervisory) e.no_360 = true;
    if (e.no_360) e.no_self = e.no_peer = e.no_supervisory = true;
    return e;
  }

  bool assessment_enabled() const { return !effective().no_360; }
  bool global_enabled() const { return !effective().no_global_exp; }
  bool local_enabled() const { return !effective().no_local_exp; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    if (no_exp_pool) out.emplace_back("no_exp_pool");
    if (no_360) out.emplace_back("no_360");
    if (no_peer) out.emplace_back("no_peer");
    if (no_self) out.emplace_back("no_self");
    if (no_supervisory) out.emplace_back("no_supervisory");
    if (no_global_exp) out.emplace_back("no_global_exp");
    if (no_local_exp) out.emplace_back("no_local_exp");
    return out;
  }

  /// Sets one flag by name; returns false for unknown names.
  bool set(std::string_view name) {
    if (name == "no_exp_pool") no_exp_pool = true;
    else if (name == "no_360") no_360 = true;
    else if (name == "no_peer") no_peer = true;
    else if (name == "no_self") no_self = true;
    else if (name == "no_supervisory") no_supervisory = true;
    else if (name == "no_global_exp") no_global_exp = true;
    else if (name == "no_local_exp") no_local_exp = true;
    else return false;
    return true;
  }

  bool operator==(const Ablations&) const = default;
};

inline const std::vector<std::string>& ablation_flag_names() {
  static const std::vector<std::string> names{"no_exp_pool",   "no_360",        "no_peer",
                                              "no_self",       "no_supervisory", "no_global_exp",
                                              "no_local_exp"};
  return names;
}

struct RunConfig {
  int turns = 2;
  int crew_min = 3;
  int crew_max = 5;
  int global_select_k = 10;
  double temperature = 1.0;
  std::optional<double> evaluator_temperature;
  Ablations ablations;
  std::int64_t seed = 0;
  std::string model_id = "gpt-4-1106-preview";
  // Upper bound on concurrent backend calls within one stage.
  int max_parallel = 1;

  void validate() const {
    if (turns < 1) throw Error(ErrorCode::config_error, "turns", "turns must be >= 1");
    if (crew_min < 1 || crew_min > crew_max)
      throw Error(ErrorCode::config_error, "crew_min", "need 1 <= crew_min <= crew_max");
    if (global_select_k < 0)
      throw Error(ErrorCode::config_error, "global_select_k", "must be >= 0");
    if (!(temperature >= 0.0)) throw Error(ErrorCode::config_error, "temperature", "must be >= 0");
    if (max_parallel < 1) throw Error(ErrorCode::config_error, "max_parallel", "must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

inline void to_json(json& j, const ExperienceOrigin& o) {
  j = json{{"run_id", o.run_id}};
  if (o.agent_index) j["agent_index"] = *o.agent_index;
  if (o.turn) j["turn"] = *o.turn;
}

inline void to_json(json& j, const Experience& e) {
  j = json{{"level", to_string(e.level)},
           {"text", e.text},
           {"origin", e.origin},
           {"created_seq", e.created_seq}};
}

inline void to_json(json& j, const Review& r) {
  j = json{{"kind", to_string(r.kind)},
           {"reviewer", r.reviewer},
           {"reviewee", r.reviewee},
           {"turn", r.turn},
           {"text", r.text}};
}

inline void to_json(json& j, const ReviewSet& s) {
  j = json{{"crew_index", s.crew_index}, {"turn", s.turn}, {"peer_reviews", s.peer_reviews}};
  if (s.self_review) j["self_review"] = *s.self_review;
  if (s.supervisory_review) j["supervisory_review"] = *s.supervisory_review;
}

inline void to_json(json& j, const SubTaskInstruction& s) {
  j = json{{"crew_index", s.crew_index}, {"role_name", s.role_name},
           {"instruction_text", s.instruction_text}};
}

inline void to_json(json& j, const TurnResponse& r) {
  j = json{{"crew_index", r.crew_index}, {"turn", r.turn}, {"text", r.text}};
}

inline void to_json(json& j, const CriterionScore& c) {
  j = json{{"name", c.name}, {"score", c.score}, {"rationale", c.rationale}};
}

inline void to_json(json& j, const EvaluationReport& r) {
  j = json{{"criteria", r.criteria}, {"overall_text", r.overall_text}};
}

inline void to_json(json& j, const Ablations& a) {
  j = json::object();
  for (const auto& name : a.names()) j[name] = true;
}

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"turns", c.turns},
           {"crew_min", c.crew_min},
           {"crew_max", c.crew_max},
           {"global_select_k", c.global_select_k},
           {"temperature", c.temperature},
           {"ablations", c.ablations.names()},
           {"effective_ablations", c.ablations.effective().names()},
           {"seed", c.seed},
           {"model_id", c.model_id}};
  if (c.evaluator_temperature) j["evaluator_temperature"] = *c.evaluator_temperature;
}

// ---------------------------------------------------------------------------
// Task documents

namespace detail {

[[noreturn]] inline void schema_fail(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::schema_error, field, why);
}

inline const json& require(const json& doc, const char* field) {
  if (!doc.is_object()) schema_fail("<root>", "task document must be an object");
  auto it = doc.find(field);
  if (it == doc.end()) schema_fail(field, "missing field");
  return *it;
}

inline std::string require_string(const json& doc, const char* field, bool nonempty = true) {
  const auto& v = require(doc, field);
  if (!v.is_string()) schema_fail(field, "expected string");
  auto s = v.get<std::string>();
  if (nonempty && text::trim(s).empty()) schema_fail(field, "must be nonempty");
  return s;
}

inline int require_int(const json& doc, const char* field, const std::string& path) {
  if (!doc.contains(field)) schema_fail(path, "missing field");
  const auto& v = doc.at(field);
  if (!v.is_number_integer()) schema_fail(path, "expected integer");
  return v.get<int>();
}

inline std::vector<std::string> require_string_list(const json& doc, const char* field) {
  const auto& v = require(doc, field);
  if (!v.is_array()) schema_fail(field, "expected array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string())
      schema_fail(std::string(field) + "[" + std::to_string(i) + "]", "expected string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

}  // namespace detail

/// Parses and validates one task document.
inline TaskQuery validate_task(const json& doc) {
  using namespace detail;
  TaskQuery task;
  auto kind = require_string(doc, "kind");
  task.task_id = require_string(doc, "task_id");

  if (kind == "creative_writing") {
    task.kind = TaskKind::creative_writing;
    CreativeWritingTask w;
    w.topic = require_string(doc, "topic");
    w.questions = require_string_list(doc, "questions");
    if (w.questions.empty()) schema_fail("questions", "at least one question required");
    for (std::size_t i = 0; i < w.questions.size(); ++i)
      if (text::trim(w.questions[i]).empty())
        schema_fail("questions[" + std::to_string(i) + "]", "must be nonempty");

    const auto& answers = require(doc, "answers");
    if (!answers.is_array()) schema_fail("answers", "expected array of alias arrays");
    if (answers.size() != w.questions.size()) {
      schema_fail("answers", "question count " + std::to_string(w.questions.size()) +
                                 " does not match answer set count " +
                                 std::to_string(answers.size()));
    }
    for (std::size_t i = 0; i < answers.size(); ++i) {
      auto path = "answers[" + std::to_string(i) + "]";
      if (!answers[i].is_array()) schema_fail(path, "expected array of aliases");
      if (answers[i].empty()) throw Error(ErrorCode::empty_answer_set, path, "no aliases");
      AnswerSet set;
      for (std::size_t k = 0; k < answers[i].size(); ++k) {
        auto apath = path + "[" + std::to_string(k) + "]";
        if (!answers[i][k].is_string()) schema_fail(apath, "expected string");
        auto alias = answers[i][k].get<std::string>();
        if (text::normalize_alias(alias).empty()) schema_fail(apath, "alias empty after normalization");
        set.aliases.push_back(std::move(alias));
      }
      w.answer_sets.push_back(std::move(set));
    }
    task.payload = std::move(w);
  } else if (kind == "travel_plan") {
    task.kind = TaskKind::travel_plan;
    TravelPlanTask t;
    t.destination = require_string(doc, "destination");
    t.days = require_int(doc, "days", "days");
    if (t.days < 1) schema_fail("days", "must be >= 1");
    t.description = require_string(doc, "description", false);
    t.season = require_string(doc, "season", false);
    t.month = require_string(doc, "month", false);
    t.interests = require_string_list(doc, "interests");
    const auto& members = require(doc, "members");
    if (!members.is_object()) schema_fail("members", "expected object");
    t.members.adults = require_int(members, "adults", "members.adults");
    t.members.children = require_int(members, "children", "members.children");
    if (t.members.adults < 0) schema_fail("members.adults", "must be >= 0");
    if (t.members.children < 0) schema_fail("members.children", "must be >= 0");
    if (t.members.adults + t.members.children < 1)
      schema_fail("members", "at least one traveller required");
    t.preferences = require_string(doc, "preferences", false);
    t.budget_range = require_string(doc, "budget_range", false);
    task.payload = std::move(t);
  } else {
    schema_fail("kind", "unknown task kind '" + kind + "'");
  }
  return task;
}

/// Inverse of validate_task on every field.
inline json task_to_json(const TaskQuery& task) {
  json j{{"kind", to_string(task.kind)}, {"task_id", task.task_id}};
  if (task.kind == TaskKind::creative_writing) {
    const auto& w = task.writing();
    j["topic"] = w.topic;
    j["questions"] = w.questions;
    json answers = json::array();
    for (const auto& set : w.answer_sets) answers.push_back(set.aliases);
    j["answers"] = std::move(answers);
  } else {
    const auto& t = task.travel();
    j["destination"] = t.destination;
    j["days"] = t.days;
    j["description"] = t.description;
    j["season"] = t.season;
    j["month"] = t.month;
    j["interests"] = t.interests;
    j["members"] = {{"adults", t.members.adults}, {"children", t.members.children}};
    j["preferences"] = t.preferences;
    j["budget_range"] = t.budget_range;
  }
  return j;
}

/// Canonical textual form of the task as fed to every prompt. Creative
/// writing embeds the topic and questions but never the answers.
inline std::string render_task_text(const TaskQuery& task) {
  std::string out;
  if (task.kind == TaskKind::creative_writing) {
    const auto& w = task.writing();
    out = "Write a short and coherent story about " + w.topic +
          " that incorporates the answers to the following " + std::to_string(w.questions.size()) +
          " questions:";
    for (const auto& q : w.questions) out += " " + std::string(text::trim(q));
    return out;
  }
  const auto& t = task.travel();
  out = "Create a travel plan that satisfies the following requirements.\n";
  out += "destination: " + t.destination + "\n";
  out += "days: " + std::to_string(t.days) + "\n";
  out += "description: " + t.description + "\n";
  out += "season: " + t.season + "\n";
  out += "month: " + t.month + "\n";
  out += "interests: " + text::join(t.interests, ", ") + "\n";
  out += "members: adults: " + std::to_string(t.members.adults) +
         ", children: " + std::to_string(t.members.children) + "\n";
  out += "preferences: " + t.preferences + "\n";
  out += "budget range: " + t.budget_range;
  return out;
}

/// One entry of a batch file: either a validated task or the reason it was
/// rejected. Rejections do not stop the rest of the batch.
struct BatchItem {
  std::size_t index = 0;
  std::string task_id;
  std::optional<TaskQuery> task;
  std::optional<Error> error;
};

inline std::vector<BatchItem> validate_batch(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorCode::schema_error, "<root>", "batch file must be an array");
  std::vector<BatchItem> items;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    BatchItem item;
    item.index = i;
    if (doc[i].is_object() && doc[i].contains("task_id") && doc[i]["task_id"].is_string())
      item.task_id = doc[i]["task_id"].get<std::string>();
    try {
      auto task = validate_task(doc[i]);
      if (!seen.insert(task.task_id).second)
        throw Error(ErrorCode::schema_error, "task_id", "duplicate task_id '" + task.task_id + "'");
      item.task = std::move(task);
    } catch (const Error& e) {
      item.error = e;
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace rea
