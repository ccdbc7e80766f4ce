#pragma once

// Completion gateway: request/result types, the OpenAI-compatible chat wire
// format, the deterministic scripted backend and the transcript-recording
// gateway every agent call goes through.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rea/error.hpp"
#include "rea/transcript.hpp"

namespace rea {

enum class CallKind {
  decompose,
  generate,
  assess_self,
  assess_peer,
  assess_supervisory,
  leader_self,
  synthesize_draft,
  synthesize_final,
  local_exp,
  global_exp,
  evaluate,
};

inline constexpr CallKind kAllCallKinds[] = {
    CallKind::decompose,        CallKind::generate,         CallKind::assess_self,
    CallKind::assess_peer,      CallKind::assess_supervisory, CallKind::leader_self,
    CallKind::synthesize_draft, CallKind::synthesize_final, CallKind::local_exp,
    CallKind::global_exp,       CallKind::evaluate,
};

constexpr std::string_view to_string(CallKind k) {
  switch (k) {
    case CallKind::decompose: return "decompose";
    case CallKind::generate: return "generate";
    case CallKind::assess_self: return "assess_self";
    case CallKind::assess_peer: return "assess_peer";
    case CallKind::assess_supervisory: return "assess_supervisory";
    case CallKind::leader_self: return "leader_self";
    case CallKind::synthesize_draft: return "synthesize_draft";
    case CallKind::synthesize_final: return "synthesize_final";
    case CallKind::local_exp: return "local_exp";
    case CallKind::global_exp: return "global_exp";
    case CallKind::evaluate: return "evaluate";
  }
  return "?";
}

inline std::optional<CallKind> parse_call_kind(std::string_view s) {
  for (auto k : kAllCallKinds)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

enum class Role { system, user, assistant };

constexpr std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  return std::nullopt;
}

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

/// Routing metadata. `crew` is the agent the call is about (the generator,
/// or the reviewee of an assessment); `turn` is the response turn involved.
struct CallTag {
  std::string run_id;
  std::uint64_t seq_hint = 0;
  CallKind call_kind = CallKind::generate;
  std::optional<int> crew;
  std::optional<int> reviewer;
  std::optional<int> turn;
  bool operator==(const CallTag&) const = default;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
  std::string model_id;
  CallTag tag;

  const ChatMessage* last_user_message() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
      if (it->role == Role::user) return &*it;
    return nullptr;
  }

  void validate() const {
    if (messages.empty()) throw Error(ErrorCode::config_error, "messages", "request has no messages");
    if (messages.front().role == Role::assistant)
      throw Error(ErrorCode::config_error, "messages[0].role", "first message must be system or user");
  }
};

enum class BackendKind { http, scripted };

constexpr std::string_view to_string(BackendKind k) {
  return k == BackendKind::http ? "http" : "scripted";
}

struct Usage {
  std::uint64_t prompt_units = 0;
  std::uint64_t completion_units = 0;
  bool operator==(const Usage&) const = default;
};

struct CompletionResult {
  std::string text;
  Usage usage;
  BackendKind backend_kind = BackendKind::scripted;
  bool operator==(const CompletionResult&) const = default;
};

/// A model endpoint. Implementations must be safe to call concurrently.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual CompletionResult complete(const CompletionRequest& req) const = 0;
  virtual BackendKind kind() const = 0;
};

// ---------------------------------------------------------------------------
// Chat-completions wire format

inline std::string encode_chat_request(const CompletionRequest& req) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages)
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  nlohmann::json body{{"model", req.model_id}, {"temperature", req.temperature},
                      {"messages", std::move(messages)}};
  return body.dump();
}

/// Decodes the fields encode_chat_request writes. Used by stub servers and
/// the round-trip property test.
inline CompletionRequest decode_chat_request(std::string_view wire) {
  auto body = nlohmann::json::parse(wire, nullptr, false);
  if (body.is_discarded() || !body.is_object())
    throw Error(ErrorCode::decode_error, "<body>", "request body is not a JSON object");
  CompletionRequest req;
  if (body.contains("model") && body["model"].is_string()) req.model_id = body["model"];
  if (body.contains("temperature") && body["temperature"].is_number())
    req.temperature = body["temperature"].get<double>();
  if (!body.contains("messages") || !body["messages"].is_array())
    throw Error(ErrorCode::decode_error, "messages");
  const auto& msgs = body["messages"];
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    auto path = "messages[" + std::to_string(i) + "]";
    const auto& m = msgs[i];
    if (!m.is_object() || !m.contains("role") || !m["role"].is_string())
      throw Error(ErrorCode::decode_error, path + ".role");
    auto role = parse_role(m["role"].get<std::string>());
    if (!role) throw Error(ErrorCode::decode_error, path + ".role", "unknown role");
    if (!m.contains("content") || !m["content"].is_string())
      throw Error(ErrorCode::decode_error, path + ".content");
    req.messages.push_back({*role, m["content"].get<std::string>()});
  }
  return req;
}

/// Extracts choices[0].message.content and usage counts.
inline CompletionResult decode_chat_response(std::string_view wire) {
  auto body = nlohmann::json::parse(wire, nullptr, false);
  if (body.is_discarded() || !body.is_object())
    throw Error(ErrorCode::decode_error, "<body>", "response body is not a JSON object");
  if (!body.contains("choices") || !body["choices"].is_array())
    throw Error(ErrorCode::decode_error, "choices");
  if (body["choices"].empty()) throw Error(ErrorCode::decode_error, "choices[0]", "no choices");
  const auto& choice = body["choices"][0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object())
    throw Error(ErrorCode::decode_error, "choices[0].message");
  const auto& message = choice["message"];
  if (!message.contains("content") || !message["content"].is_string())
    throw Error(ErrorCode::decode_error, "choices[0].message.content");

  CompletionResult result;
  result.backend_kind = BackendKind::http;
  result.text = message["content"].get<std::string>();
  if (body.contains("usage") && body["usage"].is_object()) {
    const auto& u = body["usage"];
    if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_unsigned())
      result.usage.prompt_units = u["prompt_tokens"].get<std::uint64_t>();
    if (u.contains("completion_tokens") && u["completion_tokens"].is_number_unsigned())
      result.usage.completion_units = u["completion_tokens"].get<std::uint64_t>();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scripted backend

struct ScriptedRule {
  std::optional<CallKind> call_kind;
  std::optional<std::string> contains;  // substring of the last user message
  std::string response_template;

  bool is_catch_all() const { return !call_kind && !contains; }

  bool matches(const CompletionRequest& req) const {
    if (call_kind && *call_kind != req.tag.call_kind) return false;
    if (contains) {
      const auto* m = req.last_user_message();
      if (!m || m->content.find(*contains) == std::string::npos) return false;
    }
    return true;
  }
};

/// Substitutes {seq}, {call_kind}, {reviewee} and {turn}; absent tag fields
/// render as "-". Other braces are copied through.
inline std::string expand_scripted_template(std::string_view tmpl, const CallTag& tag) {
  auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string("-"); };
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto name = tmpl.substr(i + 1, close - i - 1);
        std::optional<std::string> value;
        if (name == "seq") value = std::to_string(tag.seq_hint);
        else if (name == "call_kind") value = std::string(to_string(tag.call_kind));
        else if (name == "reviewee") value = opt(tag.crew);
        else if (name == "turn") value = opt(tag.turn);
        if (value) {
          out += *value;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

/// Deterministic stand-in for a model: output is a pure function of the
/// ordered rule table and the request. First matching rule wins.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::vector<ScriptedRule> rules) : rules_(std::move(rules)) {
    if (std::none_of(rules_.begin(), rules_.end(), [](const auto& r) { return r.is_catch_all(); }))
      throw Error(ErrorCode::config_error, "rules", "rule table needs a catch-all rule");
  }

  CompletionResult complete(const CompletionRequest& req) const override {
    req.validate();
    for (const auto& rule : rules_) {
      if (rule.matches(req))
        return {expand_scripted_template(rule.response_template, req.tag), {}, BackendKind::scripted};
    }
    // Unreachable: the constructor guarantees a catch-all.
    throw Error(ErrorCode::config_error, "rules", "no rule matched");
  }

  BackendKind kind() const override { return BackendKind::scripted; }
  const std::vector<ScriptedRule>& rules() const { return rules_; }

  static std::vector<ScriptedRule> parse_rules(const nlohmann::json& doc) {
    if (!doc.is_array()) throw Error(ErrorCode::schema_error, "<root>", "rules file must be an array");
    std::vector<ScriptedRule> rules;
    for (std::size_t i = 0; i < doc.size(); ++i) {
      auto path = "[" + std::to_string(i) + "]";
      const auto& r = doc[i];
      if (!r.is_object()) throw Error(ErrorCode::schema_error, path, "rule must be an object");
      ScriptedRule rule;
      if (r.contains("call_kind") && !r["call_kind"].is_null() && r["call_kind"] != "*") {
        if (!r["call_kind"].is_string()) throw Error(ErrorCode::schema_error, path + ".call_kind");
        rule.call_kind = parse_call_kind(r["call_kind"].get<std::string>());
        if (!rule.call_kind)
          throw Error(ErrorCode::schema_error, path + ".call_kind",
                      "unknown call kind '" + r["call_kind"].get<std::string>() + "'");
      }
      if (r.contains("contains") && !r["contains"].is_null()) {
        if (!r["contains"].is_string()) throw Error(ErrorCode::schema_error, path + ".contains");
        rule.contains = r["contains"].get<std::string>();
      }
      if (!r.contains("response") || !r["response"].is_string())
        throw Error(ErrorCode::schema_error, path + ".response", "missing response template");
      rule.response_template = r["response"].get<std::string>();
      rules.push_back(std::move(rule));
    }
    return rules;
  }

  static ScriptedBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, path.string(), "cannot open rules file");
    auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorCode::schema_error, path.string(), "rules file is not JSON");
    return ScriptedBackend(parse_rules(doc));
  }

  /// A complete table for end-to-end runs: a leader that always splits the
  /// task over `crews` roles, well-formed local experiences and evaluator
  /// scores for both rubrics, echo text for everything else.
  static std::vector<ScriptedRule> echo_table(int crews) {
    static const char* const kRoles[] = {"Historian", "Storyteller", "Editor",    "Fact Checker",
                                         "Critic",    "Navigator",   "Archivist", "Stylist"};
    std::string plan;
    for (int i = 1; i <= crews; ++i) {
      std::string role = i <= 8 ? kRoles[i - 1] : "Specialist " + std::to_string(i);
      plan += std::to_string(i) + ". Role: " + role + "\n";
      plan += "Instruction: Handle part " + std::to_string(i) + " of the task as the " + role + ".\n";
    }
    return {
        {CallKind::decompose, std::nullopt, plan},
        {CallKind::local_exp, std::nullopt,
         "Role: crew {reviewee}\nExperience: lesson from turn {turn} (call {seq})"},
        {CallKind::evaluate, std::nullopt,
         "Emotional Engagement (1-20): 15\nInsightfulness (1-20): 14\n"
         "Plan Customization (1-20): 18\nPlan Novelty (1-20): 15\nPlan Correctness (1-20): 17\n"
         "Overall: ECHO evaluate (call {seq})"},
        {CallKind::global_exp, std::nullopt,
         "Where did I do well this time: ECHO global_exp {seq}. Why didn't I do well this time: "
         "pacing. Next time I should: plan rest."},
        {std::nullopt, std::nullopt, "ECHO {call_kind}/{reviewee}/{turn}"},
    };
  }

 private:
  std::vector<ScriptedRule> rules_;
};

// ---------------------------------------------------------------------------
// Recording gateway

/// Routes every call of one run through a backend and records each
/// successful (request, result) pair exactly once, in issue order, no
/// matter how many calls ran concurrently.
class Gateway {
 public:
  Gateway(const Backend& backend, Transcript& transcript, int max_parallel = 1)
      : backend_(backend), transcript_(transcript), max_parallel_(std::max(1, max_parallel)) {}

  CompletionResult complete(CompletionRequest req) {
    std::vector<CompletionRequest> one;
    one.push_back(std::move(req));
    return complete_all(std::move(one)).front();
  }

  /// Issues a group of independent calls. Results come back in request
  /// order. After a failure no further calls start; the lowest-index error
  /// is rethrown once in-flight calls finish.
  std::vector<CompletionResult> complete_all(std::vector<CompletionRequest> reqs) {
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      reqs[i].tag.run_id = transcript_.run_id();
      reqs[i].tag.seq_hint = calls_ + i;
      reqs[i].validate();
    }
    std::vector<std::optional<CompletionResult>> results(reqs.size());
    std::vector<std::exception_ptr> errors(reqs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};

    auto worker = [&] {
      for (;;) {
        if (stop.load()) return;
        auto i = next.fetch_add(1);
        if (i >= reqs.size()) return;
        try {
          results[i] = backend_.complete(reqs[i]);
        } catch (...) {
          errors[i] = std::current_exception();
          stop.store(true);
        }
      }
    };

    auto workers = std::min<std::size_t>(static_cast<std::size_t>(max_parallel_), reqs.size());
    if (workers <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    // Every call that succeeded is recorded, in request order, even when
    // another call of the group failed.
    for (std::size_t i = 0; i < reqs.size(); ++i)
      if (results[i]) record(reqs[i], *results[i]);
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
    std::vector<CompletionResult> out;
    out.reserve(reqs.size());
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
  }

  std::uint64_t calls() const { return calls_; }
  const Backend& backend() const { return backend_; }

 private:
  void record(const CompletionRequest& req, const CompletionResult& res) {
    ++calls_;
    transcript_.append(event_kind::completion, completion_payload(req, res));
  }

 public:
  static nlohmann::json completion_payload(const CompletionRequest& req, const CompletionResult& res) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : req.messages)
      messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    nlohmann::json p{{"run_id", req.tag.run_id},
                     {"call_kind", to_string(req.tag.call_kind)},
                     {"seq_hint", req.tag.seq_hint},
                     {"model", req.model_id},
                     {"temperature", req.temperature},
                     {"messages", std::move(messages)},
                     {"text", res.text},
                     {"usage",
                      {{"prompt_units", res.usage.prompt_units},
                       {"completion_units", res.usage.completion_units}}},
                     {"backend", to_string(res.backend_kind)}};
    if (req.tag.crew) p["crew"] = *req.tag.crew;
    if (req.tag.reviewer) p["reviewer"] = *req.tag.reviewer;
    if (req.tag.turn) p["turn"] = *req.tag.turn;
    return p;
  }

 private:
  const Backend& backend_;
  Transcript& transcript_;
  int max_parallel_;
  std::uint64_t calls_ = 0;
};

/// Rebuilds the request that produced a recorded completion event.
inline CompletionRequest request_from_event(const TranscriptEvent& e) {
  const auto& p = e.payload;
  CompletionRequest req;
  req.model_id = p.at("model").get<std::string>();
  req.temperature = p.at("temperature").get<double>();
  for (const auto& m : p.at("messages"))
    req.messages.push_back({*parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
  req.tag.run_id = p.at("run_id").get<std::string>();
  req.tag.seq_hint = p.at("seq_hint").get<std::uint64_t>();
  req.tag.call_kind = *parse_call_kind(p.at("call_kind").get<std::string>());
  if (p.contains("crew")) req.tag.crew = p["crew"].get<int>();
  if (p.contains("reviewer")) req.tag.reviewer = p["reviewer"].get<int>();
  if (p.contains("turn")) req.tag.turn = p["turn"].get<int>();
  return req;
}

/// Re-issues every recorded prompt against `backend` and reports the first
/// completion event whose text or recorded payload differs, if any.
inline std::optional<std::uint64_t> replay_mismatch(const Transcript& transcript, const Backend& backend) {
  for (const auto& e : transcript.snapshot()) {
    if (e.event_kind != event_kind::completion) continue;
    auto req = request_from_event(e);
    auto res = backend.complete(req);
    if (Gateway::completion_payload(req, res) != e.payload) return e.seq;
  }
  return std::nullopt;
}

inline std::size_t count_calls(const std::vector<TranscriptEvent>& events,
                               std::optional<CallKind> kind = std::nullopt) {
  std::size_t n = 0;
  for (const auto& e : events) {
    if (e.event_kind != event_kind::completion) continue;
    if (kind && e.payload.value("call_kind", "") != to_string(*kind)) continue;
    ++n;
  }
  return n;
}

}  // namespace rea
