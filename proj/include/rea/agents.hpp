#pragma once

#include <optional>
#include <string>

#include "rea/backend.hpp"
#include "rea/domain.hpp"

namespace rea::agents {

inline std::string leader_persona() {
  return "You are the leader agent of a team of crew agents. You plan the work, supervise the crew "
         "and write the final answer.";
}

inline std::string crew_persona(const std::string& role_name) {
  return "You are a crew agent on a team run by a leader agent. Your role: " + role_name + ".";
}

/// A two-message (system, user) request tagged for routing and transcripts.
inline CompletionRequest make_request(const RunConfig& config, CallKind kind, std::string system,
                                      std::string user, std::optional<int> crew = std::nullopt,
                                      std::optional<int> reviewer = std::nullopt,
                                      std::optional<int> turn = std::nullopt) {
  CompletionRequest req;
  req.model_id = config.model_id;
  req.temperature = config.temperature;
  req.tag.call_kind = kind;
  req.tag.crew = crew;
  req.tag.reviewer = reviewer;
  req.tag.turn = turn;
  req.messages = {{Role::system, std::move(system)}, {Role::user, std::move(user)}};
  return req;
}

}  // namespace rea::agents
