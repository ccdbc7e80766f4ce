#include <gtest/gtest.h>

#include <random>

#include "support/test_support.hpp"

using namespace rea;

namespace {

CompletionRequest request(CallKind kind, std::string user, std::optional<int> crew = std::nullopt,
                          std::optional<int> turn = std::nullopt) {
  CompletionRequest r;
  r.model_id = "m";
  r.temperature = 0.5;
  r.tag.call_kind = kind;
  r.tag.crew = crew;
  r.tag.turn = turn;
  r.messages = {{Role::system, "sys"}, {Role::user, std::move(user)}};
  return r;
}

std::vector<ScriptedRule> table() {
  return {{CallKind::evaluate, std::nullopt, "scores"},
          {std::nullopt, std::string("needle"), "found needle"},
          {std::nullopt, std::nullopt, "{call_kind}:{reviewee}:{turn}:{seq}:{other}"}};
}

}  // namespace

TEST(Scripted, FirstMatchingRuleWins) {
  ScriptedBackend b(table());
  EXPECT_EQ(b.complete(request(CallKind::evaluate, "needle")).text, "scores");
  EXPECT_EQ(b.complete(request(CallKind::generate, "a needle here")).text, "found needle");
}

TEST(Scripted, PlaceholdersExpandAndAbsentValuesRenderAsDash) {
  ScriptedBackend b(table());
  EXPECT_EQ(b.complete(request(CallKind::assess_peer, "x", 3, 1)).text, "assess_peer:3:1:0:{other}");
  EXPECT_EQ(b.complete(request(CallKind::synthesize_draft, "x")).text, "synthesize_draft:-:-:0:{other}");
}

TEST(Scripted, CatchAllIsMandatory) {
  EXPECT_THROW(ScriptedBackend({{CallKind::generate, std::nullopt, "x"}}), Error);
}

TEST(Scripted, RulesFileParses) {
  auto b = ScriptedBackend::from_file(rea::test::repo_fixtures_dir() / "rules" / "echo.json");
  EXPECT_EQ(b.rules().size(), 5u);
  EXPECT_EQ(b.complete(request(CallKind::assess_self, "x", 2, 0)).text, "ECHO assess_self/2/0");
  EXPECT_THROW(ScriptedBackend::parse_rules(nlohmann::json::parse(R"([{"call_kind":"bogus","response":"x"}])")),
               Error);
}

TEST(Scripted, IsPureFunctionOfRequest) {
  ScriptedBackend b(ScriptedBackend::echo_table(3));
  auto r = request(CallKind::local_exp, "reviews", 2, 1);
  EXPECT_EQ(b.complete(r), b.complete(r));
}

TEST(Wire, EncodeDecodeRoundTrip) {
  std::mt19937 rng(11);
  const std::vector<std::string> chars{"a", "b", " ", "\n", "\t", "\"", "\\", "{", "}", "/", "é", "\x01"};
  for (int i = 0; i < 200; ++i) {
    CompletionRequest r;
    r.model_id = "model-" + std::to_string(i);
    r.temperature = (i % 21) / 10.0;
    int n = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < n; ++k) {
      std::string content;
      for (int c = static_cast<int>(rng() % 30); c > 0; --c) content += chars[rng() % chars.size()];
      r.messages.push_back({k == 0 ? Role::system : (k % 2 ? Role::user : Role::assistant), content});
    }
    auto back = decode_chat_request(encode_chat_request(r));
    EXPECT_EQ(back.model_id, r.model_id);
    EXPECT_DOUBLE_EQ(back.temperature, r.temperature);
    EXPECT_EQ(back.messages, r.messages);
  }
}

TEST(Wire, DecodeResponseNamesTheMissingPath) {
  auto path_of = [](const std::string& body) {
    try {
      decode_chat_response(body);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::decode_error);
      return e.detail();
    }
    return std::string("no error");
  };
  EXPECT_EQ(path_of("not json"), "<body>");
  EXPECT_EQ(path_of("{}"), "choices");
  EXPECT_EQ(path_of(R"({"choices":[]})"), "choices[0]");
  EXPECT_EQ(path_of(R"({"choices":[{}]})"), "choices[0].message");
  EXPECT_EQ(path_of(R"({"choices":[{"message":{"role":"assistant"}}]})"), "choices[0].message.content");
  auto ok = decode_chat_response(
      R"({"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}})");
  EXPECT_EQ(ok.text, "hi");
  EXPECT_EQ(ok.usage.prompt_units, 3u);
  EXPECT_EQ(ok.usage.completion_units, 1u);
}

namespace {

/// Fails on one chosen call index.
class FailingBackend final : public Backend {
 public:
  explicit FailingBackend(std::uint64_t fail_at) : fail_at_(fail_at) {}
  CompletionResult complete(const CompletionRequest& req) const override {
    if (req.tag.seq_hint == fail_at_) throw Error(ErrorCode::transport_error, "stub", "injected");
    return {"ok " + std::to_string(req.tag.seq_hint), {}, BackendKind::scripted};
  }
  BackendKind kind() const override { return BackendKind::scripted; }

 private:
  std::uint64_t fail_at_;
};

}  // namespace

TEST(Gateway, RecordsOneCompletionPerCallInRequestOrder) {
  for (int parallel : {1, 4}) {
    Transcript tr("r");
    ScriptedBackend b(table());
    Gateway gw(b, tr, parallel);
    std::vector<CompletionRequest> reqs;
    for (int i = 0; i < 9; ++i) reqs.push_back(request(CallKind::generate, "x", i + 1, 0));
    auto res = gw.complete_all(reqs);
    ASSERT_EQ(res.size(), 9u);
    auto events = tr.snapshot();
    ASSERT_EQ(events.size(), 9u);
    for (int i = 0; i < 9; ++i) {
      EXPECT_EQ(events[i].payload["crew"], i + 1);
      EXPECT_EQ(events[i].payload["seq_hint"], i);
      EXPECT_EQ(res[i].text, "generate:" + std::to_string(i + 1) + ":0:" + std::to_string(i) + ":{other}");
    }
    EXPECT_EQ(gw.calls(), 9u);
  }
}

TEST(Gateway, FailurePropagatesAndOnlySuccessfulCallsAreRecorded) {
  Transcript tr("r");
  FailingBackend b(2);
  Gateway gw(b, tr, 1);
  std::vector<CompletionRequest> reqs(5, request(CallKind::generate, "x"));
  EXPECT_THROW(gw.complete_all(reqs), Error);
  EXPECT_EQ(tr.count(event_kind::completion), 2u);
}

TEST(Gateway, ReplayOfScriptedTranscriptMatches) {
  rea::test::TempDir tmp;
  auto o = rea::test::scripted_run(3, 1, {}, tmp.workspace());
  ScriptedBackend same(ScriptedBackend::echo_table(3));
  EXPECT_FALSE(replay_mismatch(o.transcript, same));
  ScriptedBackend other({{std::nullopt, std::nullopt, "different"}});
  EXPECT_TRUE(replay_mismatch(o.transcript, other));
  EXPECT_EQ(count_calls(o.transcript.snapshot()), expected_call_count(3, 1, {}));
  EXPECT_EQ(count_calls(o.transcript.snapshot(), CallKind::assess_peer), 6u);
}
