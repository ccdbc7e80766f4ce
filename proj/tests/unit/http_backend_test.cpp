#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "rea/http_backend.hpp"

using namespace rea;

namespace {

/// Local chat-completions stub. Fails the first `failures` requests with
/// `fail_status`, then answers with the last user message reversed.
class StubServer {
 public:
  StubServer(int failures, int fail_status) : failures_(failures), fail_status_(fail_status) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      auth_ = req.get_header_value("Authorization");
      if (failures_-- > 0) {
        res.status = fail_status_;
        res.set_content(R"({"error":"busy"})", "application/json");
        return;
      }
      auto decoded = decode_chat_request(req.body);
      model_ = decoded.model_id;
      std::string text(decoded.last_user_message()->content.rbegin(), decoded.last_user_message()->content.rend());
      nlohmann::json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                          {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 2}}}};
      res.set_content(body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int hits() const { return hits_; }
  std::string auth() const { return auth_; }
  std::string model() const { return model_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> failures_;
  int fail_status_;
  std::atomic<int> hits_{0};
  std::string auth_, model_;
};

HttpBackendOptions options(const std::string& url) {
  HttpBackendOptions o;
  o.base_url = url;
  o.api_key = "test-key";
  o.initial_backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(5);
  return o;
}

CompletionRequest hello() {
  CompletionRequest r;
  r.model_id = "stub-model";
  r.messages = {{Role::system, "s"}, {Role::user, "hello"}};
  return r;
}

}  // namespace

TEST(HttpBackend, RoundTripsAgainstStub) {
  StubServer stub(0, 500);
  HttpBackend b(options(stub.url() + "/v1/"));
  auto res = b.complete(hello());
  EXPECT_EQ(res.text, "olleh");
  EXPECT_EQ(res.usage.prompt_units, 7u);
  EXPECT_EQ(res.backend_kind, BackendKind::http);
  EXPECT_EQ(stub.auth(), "Bearer test-key");
  EXPECT_EQ(stub.model(), "stub-model");
}

TEST(HttpBackend, RetriesTransientFailures) {
  StubServer stub(2, 503);
  HttpBackend b(options(stub.url()));
  EXPECT_EQ(b.complete(hello()).text, "olleh");
  EXPECT_EQ(stub.hits(), 3);
}

TEST(HttpBackend, GivesUpAfterMaxAttempts) {
  StubServer stub(10, 429);
  HttpBackend b(options(stub.url()));
  try {
    b.complete(hello());
    FAIL() << "expected transport_error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport_error);
  }
  EXPECT_EQ(stub.hits(), 3);
}

TEST(HttpBackend, ClientErrorsAreNotRetried) {
  StubServer stub(10, 400);
  HttpBackend b(options(stub.url()));
  EXPECT_THROW(b.complete(hello()), Error);
  EXPECT_EQ(stub.hits(), 1);
}

TEST(HttpBackend, MissingCredentialIsCredentialError) {
  auto o = options("http://127.0.0.1:1");
  o.api_key.clear();
  try {
    HttpBackend b(o);
    FAIL() << "expected credential_error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::credential_error);
    EXPECT_EQ(family_of(e.code()), ErrorFamily::backend);
  }
}

TEST(HttpBackend, UnreachableEndpointIsTransportError) {
  auto o = options("http://127.0.0.1:1");
  o.max_attempts = 2;
  HttpBackend b(o);
  try {
    b.complete(hello());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport_error);
  }
}
