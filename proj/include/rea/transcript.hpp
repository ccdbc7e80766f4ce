#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rea/error.hpp"

namespace rea {

namespace event_kind {
inline constexpr const char* run_start = "run_start";
inline constexpr const char* completion = "completion";
inline constexpr const char* artifact = "artifact";
inline constexpr const char* run_end = "run_end";
inline constexpr const char* run_failed = "run_failed";
}  // namespace event_kind

struct TranscriptEvent {
  std::uint64_t seq = 0;
  std::string event_kind;
  nlohmann::json payload;

  nlohmann::json to_json() const {
    return {{"seq", seq}, {"event_kind", event_kind}, {"payload", payload}};
  }
  bool operator==(const TranscriptEvent&) const = default;
};

/// Ordered, append-only record of a run. Appends are serialized and get a
/// dense seq at append time.
class Transcript {
 public:
  Transcript() = default;
  explicit Transcript(std::string run_id) : run_id_(std::move(run_id)) {}

  Transcript(const Transcript& other) : run_id_(other.run_id_), events_(other.snapshot()) {}
  Transcript& operator=(const Transcript& other) {
    if (this != &other) {
      auto copy = other.snapshot();
      std::lock_guard lock(mutex_);
      run_id_ = other.run_id_;
      events_ = std::move(copy);
    }
    return *this;
  }

  const std::string& run_id() const { return run_id_; }

  std::uint64_t append(std::string kind, nlohmann::json payload) {
    std::lock_guard lock(mutex_);
    auto seq = static_cast<std::uint64_t>(events_.size());
    events_.push_back({seq, std::move(kind), std::move(payload)});
    return seq;
  }

  std::vector<TranscriptEvent> snapshot() const {
    std::lock_guard lock(mutex_);
    return events_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return events_.size();
  }

  std::size_t count(std::string_view kind) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& e : events_) n += e.event_kind == kind;
    return n;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& e : snapshot()) {
      out += e.to_json().dump();
      out += '\n';
    }
    return out;
  }

  void write(const std::filesystem::path& path) const {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, path.string(), "cannot open transcript for writing");
    out << to_jsonl();
    if (!out) throw Error(ErrorCode::io_error, path.string(), "write failed");
  }

  static Transcript read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, path.string(), "cannot open transcript");
    Transcript t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::schema_error, path.string() + ":" + std::to_string(lineno), e.what());
      }
      if (!j.is_object() || !j.contains("seq") || !j.contains("event_kind") || !j.contains("payload"))
        throw Error(ErrorCode::schema_error, path.string() + ":" + std::to_string(lineno),
                    "event needs seq, event_kind and payload");
      auto seq = j["seq"].get<std::uint64_t>();
      if (seq != t.events_.size())
        throw Error(ErrorCode::schema_error, path.string() + ":" + std::to_string(lineno),
                    "seq is not dense");
      t.events_.push_back({seq, j["event_kind"].get<std::string>(), j["payload"]});
      if (t.run_id_.empty() && t.events_.back().payload.contains("run_id"))
        t.run_id_ = t.events_.back().payload["run_id"].get<std::string>();
    }
    return t;
  }

 private:
  std::string run_id_;
  mutable std::mutex mutex_;
  std::vector<TranscriptEvent> events_;
};

/// Event filter used by `inspect transcript`.
struct EventFilter {
  std::optional<std::string> call_kind;
  std::optional<int> crew;
  std::optional<int> turn;

  bool matches(const TranscriptEvent& e) const {
    const auto& p = e.payload;
    if (call_kind && (!p.contains("call_kind") || p["call_kind"] != *call_kind)) return false;
    if (crew && (!p.contains("crew") || p["crew"] != *crew)) return false;
    if (turn && (!p.contains("turn") || p["turn"] != *turn)) return false;
    return true;
  }
};

inline std::vector<TranscriptEvent> filter_events(const std::vector<TranscriptEvent>& events,
                                                  const EventFilter& f) {
  std::vector<TranscriptEvent> out;
  for (const auto& e : events)
    if (f.matches(e)) out.push_back(e);
  return out;
}

}  // namespace rea
