#pragma once

// OpenAI-compatible chat-completions client. Kept out of backend.hpp so only
// translation units that talk to a live endpoint pull in cpp-httplib.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>

#include "rea/backend.hpp"

namespace rea {

struct HttpBackendOptions {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::string api_key;
  std::chrono::seconds timeout{120};
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};

  /// Reads REA_API_KEY and REA_BASE_URL. An explicit base_url argument wins
  /// over the environment.
  static HttpBackendOptions from_env(std::string base_url_override = {}) {
    HttpBackendOptions opts;
    if (const char* key = std::getenv("REA_API_KEY")) opts.api_key = key;
    if (!base_url_override.empty()) opts.base_url = std::move(base_url_override);
    else if (const char* url = std::getenv("REA_BASE_URL")) opts.base_url = url;
    else opts.base_url = "https://api.openai.com";
    return opts;
  }
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions opts) : opts_(std::move(opts)) {
    if (opts_.api_key.empty())
      throw Error(ErrorCode::credential_error, "REA_API_KEY",
                  "no API credential configured; set REA_API_KEY");
    split_url();
  }

  CompletionResult complete(const CompletionRequest& req) const override {
    req.validate();
    const auto body = encode_chat_request(req);
    auto backoff = opts_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
      httplib::Client client(origin_);
      client.set_connection_timeout(opts_.timeout);
      client.set_read_timeout(opts_.timeout);
      client.set_write_timeout(opts_.timeout);
      client.set_bearer_token_auth(opts_.api_key);

      auto res = client.Post(path_prefix_ + "/v1/chat/completions", body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
      } else if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
      } else if (res->status < 200 || res->status >= 300) {
        // Client errors are not transient.
        throw Error(ErrorCode::transport_error, "HTTP " + std::to_string(res->status), res->body);
      } else {
        return decode_chat_response(res->body);
      }
      if (attempt < opts_.max_attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
    throw Error(ErrorCode::transport_error, origin_ + path_prefix_,
                "giving up after " + std::to_string(opts_.max_attempts) + " attempts: " + last_error);
  }

  BackendKind kind() const override { return BackendKind::http; }

 private:
  void split_url() {
    auto url = opts_.base_url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    // A trailing /v1 is tolerated since many providers document it that way.
    if (url.size() >= 3 && url.compare(url.size() - 3, 3, "/v1") == 0) url.resize(url.size() - 3);
    auto scheme_end = url.find("://");
    auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto slash = url.find('/', host_start);
    origin_ = slash == std::string::npos ? url : url.substr(0, slash);
    path_prefix_ = slash == std::string::npos ? "" : url.substr(slash);
  }

  HttpBackendOptions opts_;
  std::string origin_;
  std::string path_prefix_;
};

}  // namespace rea
