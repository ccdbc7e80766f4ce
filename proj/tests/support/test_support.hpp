#pragma once

// Test-side helpers and independent oracles. Nothing here reuses the library
// code it is meant to check.

#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rea/rea.hpp"

namespace rea::test {

namespace fs = std::filesystem;

inline fs::path fixtures_dir() { return fs::path(REA_TEST_FIXTURES); }
inline fs::path repo_fixtures_dir() { return fs::path(REA_REPO_FIXTURES); }
inline fs::path prompts_dir() { return fs::path(REA_PROMPTS_DIR); }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("rea-test-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  Workspace workspace(const std::string& sub = "ws") const { return Workspace{path_ / sub}; }

 private:
  fs::path path_;
};

inline TaskQuery zelda_task() { return validate_task(load_json(repo_fixtures_dir() / "tasks" / "zelda.json")); }
inline TaskQuery barcelona_task() {
  return validate_task(load_json(repo_fixtures_dir() / "tasks" / "barcelona.json"));
}

inline RunConfig scripted_config(int turns, const Ablations& ablations = {}, int max_parallel = 1) {
  RunConfig c;
  c.turns = turns;
  c.crew_min = 1;
  c.crew_max = 8;
  c.ablations = ablations;
  c.max_parallel = max_parallel;
  return c;
}

inline Ablations only(const std::string& flag) {
  Ablations a;
  if (flag != "full" && !a.set(flag)) throw std::invalid_argument("unknown flag " + flag);
  return a;
}

inline const std::vector<std::string>& single_flags() {
  static const std::vector<std::string> v{"no_exp_pool",    "no_360",        "no_peer",     "no_self",
                                          "no_supervisory", "no_global_exp", "no_local_exp"};
  return v;
}

/// Count of completion events per call kind.
inline std::map<std::string, std::size_t> kind_counts(const Transcript& tr) {
  std::map<std::string, std::size_t> out;
  for (auto k : kAllCallKinds) out[std::string(to_string(k))] = 0;
  for (const auto& e : tr.snapshot())
    if (e.event_kind == event_kind::completion) ++out[e.payload["call_kind"].get<std::string>()];
  return out;
}

inline std::size_t completion_count(const Transcript& tr) {
  std::size_t n = 0;
  for (const auto& e : tr.snapshot()) n += e.event_kind == event_kind::completion;
  return n;
}

/// All user/system message texts sent for one call kind, in transcript order.
inline std::vector<std::string> prompts_of(const Transcript& tr, const std::string& call_kind) {
  std::vector<std::string> out;
  for (const auto& e : tr.snapshot()) {
    if (e.event_kind != event_kind::completion || e.payload["call_kind"] != call_kind) continue;
    std::string all;
    for (const auto& m : e.payload["messages"]) all += m["content"].get<std::string>() + "\n";
    out.push_back(std::move(all));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle: backend calls of one run, enumerated stage by stage.

inline std::size_t oracle_call_count(int n, int t, const Ablations& flags) {
  bool pool_off = flags.no_exp_pool;
  bool global_on = !(pool_off || flags.no_global_exp);
  bool local_on = !(pool_off || flags.no_local_exp);
  bool any_level = !flags.no_360 && !(flags.no_self && flags.no_peer && flags.no_supervisory);
  bool self_on = any_level && !flags.no_self;
  bool peer_on = any_level && !flags.no_peer;
  bool sup_on = any_level && !flags.no_supervisory;

  std::size_t calls = 1;  // leader decomposition
  for (int turn = 0; turn <= t; ++turn) {
    for (int i = 1; i <= n; ++i) ++calls;  // generation
    if (turn == t) break;                  // the final pass is not assessed
    for (int reviewee = 1; reviewee <= n; ++reviewee) {
      if (self_on) ++calls;
      if (peer_on)
        for (int reviewer = 1; reviewer <= n; ++reviewer)
          if (reviewer != reviewee) ++calls;
      if (sup_on) ++calls;
      if (any_level && local_on) ++calls;  // reflection on the review set
    }
  }
  calls += 1;                 // draft
  calls += any_level ? 1 : 0;  // leader self review
  calls += 1;                 // final answer
  calls += 1;                 // evaluation
  calls += global_on ? 1 : 0;  // global experience
  return calls;
}

// ---------------------------------------------------------------------------
// Oracle: match rate by direct character scanning.

inline std::string oracle_fold(const std::string& s) {
  // lowercase ASCII, collapse whitespace runs to one space, trim
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
  }
  return out;
}

inline std::string oracle_alias(const std::string& alias) {
  auto s = oracle_fold(alias);
  auto punct = [](unsigned char c) { return c < 128 && std::ispunct(c); };
  std::size_t b = 0, e = s.size();
  while (b < e && (punct(s[b]) || s[b] == ' ')) ++b;
  while (e > b && (punct(s[e - 1]) || s[e - 1] == ' ')) --e;
  return s.substr(b, e - b);
}

inline bool oracle_contains(const std::string& hay, const std::string& needle) {
  if (needle.empty()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    std::size_t k = 0;
    while (k < needle.size() && hay[i + k] == needle[k]) ++k;
    if (k == needle.size()) return true;
  }
  return false;
}

inline double oracle_match_rate(const std::string& story, const std::vector<std::vector<std::string>>& answers) {
  const auto hay = oracle_fold(story);
  int matched = 0;
  for (const auto& aliases : answers) {
    for (const auto& a : aliases) {
      if (oracle_contains(hay, oracle_alias(a))) {
        ++matched;
        break;
      }
    }
  }
  return 100.0 * matched / static_cast<double>(answers.size());
}

/// Random (story, answer sets) case over a small alphabet so that matches
/// actually happen.
struct MatchCase {
  std::string story;
  std::vector<std::vector<std::string>> answers;
  std::vector<AnswerSet> sets() const {
    std::vector<AnswerSet> out;
    for (const auto& a : answers) out.push_back(AnswerSet{a});
    return out;
  }
};

inline MatchCase random_match_case(std::mt19937& rng) {
  static const std::string alphabet = "abAB  \t\n.,'-xyZ";
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto word = [&](int len) {
    std::string w;
    for (int i = 0; i < len; ++i) w.push_back(alphabet[pick(0, static_cast<int>(alphabet.size()) - 1)]);
    return w;
  };
  MatchCase c;
  c.story = word(pick(0, 60));
  int questions = pick(1, 5);
  for (int q = 0; q < questions; ++q) {
    std::vector<std::string> aliases;
    int n = pick(1, 3);
    for (int k = 0; k < n; ++k) {
      std::string alias;
      if (!c.story.empty() && pick(0, 2) == 0) {
        // a slice of the story, possibly recased and with edge punctuation
        int b = pick(0, static_cast<int>(c.story.size()) - 1);
        int len = pick(1, std::min(8, static_cast<int>(c.story.size()) - b));
        alias = c.story.substr(b, len);
        for (auto& ch : alias)
          if (pick(0, 1)) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (pick(0, 3) == 0) alias = "\"" + alias + ".";
      } else {
        alias = word(pick(1, 5));
      }
      if (oracle_alias(alias).empty()) alias = "zz" + alias;
      aliases.push_back(alias);
    }
    c.answers.push_back(std::move(aliases));
  }
  return c;
}

// ---------------------------------------------------------------------------

/// One scripted run of the Zelda task with N crews.
inline RunOutcome scripted_run(int crews, int turns, const Ablations& flags, const Workspace& ws,
                               int max_parallel = 1, const RunOptions& opts = {}) {
  ScriptedBackend backend(ScriptedBackend::echo_table(crews));
  Orchestrator orch(backend, PromptRegistry::builtin(), scripted_config(turns, flags, max_parallel));
  return orch.run_task(zelda_task(), ws, opts);
}

/// Unresolved `{name}` slots of any registered template left in `text`.
inline std::vector<std::string> unresolved_slots(const std::string& text) {
  std::vector<std::string> out;
  for (auto id : kAllTemplates)
    for (const auto& name : PromptRegistry::builtin().get(id).required_placeholders)
      if (text.find("{" + name + "}") != std::string::npos) out.push_back(name);
  return out;
}

}  // namespace rea::test
