#pragma once

// One 360-degree assessment round: every crew response gets a self review,
// a review from each other crew agent and a supervisory review from the
// leader. Reviews are free text that feed the next revision.

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rea/agents.hpp"
#include "rea/backend.hpp"
#include "rea/domain.hpp"
#include "rea/prompts.hpp"

namespace rea::assessment {

struct Context {
  Gateway& gateway;
  const PromptRegistry& prompts;
  const RunConfig& config;
};

inline CompletionRequest self_request(const Context& ctx, const TurnResponse& response,
                                      const SubTaskInstruction& instruction) {
  if (response.crew_index != instruction.crew_index)
    throw Error(ErrorCode::invalid_pair, std::to_string(response.crew_index),
                "response and instruction belong to different crew agents");
  auto user = ctx.prompts.render(TemplateId::assess_self, {{"instruction", instruction.instruction_text},
                                                           {"response", response.text}});
  return agents::make_request(ctx.config, CallKind::assess_self, agents::crew_persona(instruction.role_name),
                              std::move(user), response.crew_index, response.crew_index, response.turn);
}

inline CompletionRequest peer_request(const Context& ctx, int reviewer_index, const std::string& reviewer_role,
                                      const TurnResponse& reviewer_response,
                                      const TurnResponse& reviewee_response,
                                      const SubTaskInstruction& reviewee_instruction) {
  if (reviewer_index == reviewee_response.crew_index || reviewer_index < 1)
    throw Error(ErrorCode::invalid_pair,
                std::to_string(reviewer_index) + "->" + std::to_string(reviewee_response.crew_index),
                "peer review needs two distinct crew agents");
  auto user = ctx.prompts.render(TemplateId::assess_peer,
                                 {{"own_response", reviewer_response.text},
                                  {"instruction", reviewee_instruction.instruction_text},
                                  {"response", reviewee_response.text}});
  return agents::make_request(ctx.config, CallKind::assess_peer, agents::crew_persona(reviewer_role),
                              std::move(user), reviewee_response.crew_index, reviewer_index,
                              reviewee_response.turn);
}

inline CompletionRequest supervisory_request(const Context& ctx, const TurnResponse& response,
                                             const SubTaskInstruction& instruction) {
  auto user = ctx.prompts.render(TemplateId::assess_supervisory,
                                 {{"instruction", instruction.instruction_text}, {"response", response.text}});
  return agents::make_request(ctx.config, CallKind::assess_supervisory, agents::leader_persona(),
                              std::move(user), response.crew_index, kLeaderIndex, response.turn);
}

/// Converts a completed assessment call back into a Review.
inline Review review_from(const CompletionRequest& req, std::string text) {
  Review r;
  switch (req.tag.call_kind) {
    case CallKind::assess_self: r.kind = ReviewKind::self; break;
    case CallKind::assess_peer: r.kind = ReviewKind::peer; break;
    case CallKind::assess_supervisory: r.kind = ReviewKind::supervisory; break;
    case CallKind::leader_self: r.kind = ReviewKind::leader_self; break;
    default: throw Error(ErrorCode::parse_error, std::string(to_string(req.tag.call_kind)), "not a review call");
  }
  r.reviewer = req.tag.reviewer.value_or(kLeaderIndex);
  r.reviewee = req.tag.crew.value_or(kLeaderIndex);
  r.turn = req.tag.turn.value_or(0);
  r.text = std::move(text);
  if (r.text.empty()) throw Error(ErrorCode::parse_error, std::string(to_string(req.tag.call_kind)), "empty review");
  check_review(r);
  return r;
}

inline Review self_assess(const Context& ctx, const TurnResponse& response, const SubTaskInstruction& instruction) {
  auto req = self_request(ctx, response, instruction);
  auto res = ctx.gateway.complete(req);
  return review_from(req, std::move(res.text));
}

inline Review peer_assess(const Context& ctx, int reviewer_index, const std::string& reviewer_role,
                          const TurnResponse& reviewer_response, const TurnResponse& reviewee_response,
                          const SubTaskInstruction& reviewee_instruction) {
  auto req = peer_request(ctx, reviewer_index, reviewer_role, reviewer_response, reviewee_response,
                          reviewee_instruction);
  auto res = ctx.gateway.complete(req);
  return review_from(req, std::move(res.text));
}

inline Review supervisory_assess(const Context& ctx, const TurnResponse& response,
                                 const SubTaskInstruction& instruction) {
  auto req = supervisory_request(ctx, response, instruction);
  auto res = ctx.gateway.complete(req);
  return review_from(req, std::move(res.text));
}

/// Groups the reviews of one crew agent for one turn, enforcing exact
/// cardinalities for every enabled level.
inline ReviewSet assemble_review_set(int crew_index, int turn, std::vector<Review> reviews, int crew_count,
                                     const Ablations& ablations) {
  const auto eff = ablations.effective();
  ReviewSet set;
  set.crew_index = crew_index;
  set.turn = turn;
  for (auto& r : reviews) {
    if (r.reviewee != crew_index || r.turn != turn)
      throw Error(ErrorCode::cardinality_error, "reviewee",
                  "review targets crew " + std::to_string(r.reviewee) + " turn " + std::to_string(r.turn));
    check_review(r);
    switch (r.kind) {
      case ReviewKind::self:
        if (set.self_review || eff.no_self) throw Error(ErrorCode::cardinality_error, "self");
        set.self_review = std::move(r);
        break;
      case ReviewKind::supervisory:
        if (set.supervisory_review || eff.no_supervisory)
          throw Error(ErrorCode::cardinality_error, "supervisory");
        set.supervisory_review = std::move(r);
        break;
      case ReviewKind::peer:
        if (eff.no_peer) throw Error(ErrorCode::cardinality_error, "peer");
        set.peer_reviews.push_back(std::move(r));
        break;
      case ReviewKind::leader_self:
        throw Error(ErrorCode::cardinality_error, "leader_self", "leader reviews are not part of a crew set");
    }
  }
  if (!eff.no_self && !set.self_review) throw Error(ErrorCode::cardinality_error, "self", "missing");
  if (!eff.no_supervisory && !set.supervisory_review)
    throw Error(ErrorCode::cardinality_error, "supervisory", "missing");
  std::sort(set.peer_reviews.begin(), set.peer_reviews.end(),
            [](const Review& a, const Review& b) { return a.reviewer < b.reviewer; });
  if (!eff.no_peer) {
    bool ok = static_cast<int>(set.peer_reviews.size()) == crew_count - 1;
    for (std::size_t i = 1; ok && i < set.peer_reviews.size(); ++i)
      ok = set.peer_reviews[i].reviewer != set.peer_reviews[i - 1].reviewer;
    if (!ok)
      throw Error(ErrorCode::cardinality_error, "peer",
                  "expected " + std::to_string(crew_count - 1) + " distinct peer reviews, got " +
                      std::to_string(set.peer_reviews.size()));
  }
  return set;
}

/// Builds the round's requests in canonical order: for each crew ascending,
/// self, then peers by reviewer ascending, then supervisory.
inline std::vector<CompletionRequest> round_requests(const Context& ctx,
                                                     std::span<const SubTaskInstruction> instructions,
                                                     std::span<const TurnResponse> responses) {
  const auto eff = ctx.config.ablations.effective();
  std::vector<CompletionRequest> reqs;
  if (eff.no_360) return reqs;
  const auto n = responses.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!eff.no_self) reqs.push_back(self_request(ctx, responses[i], instructions[i]));
    if (!eff.no_peer) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        reqs.push_back(peer_request(ctx, instructions[j].crew_index, instructions[j].role_name, responses[j],
                                    responses[i], instructions[i]));
      }
    }
    if (!eff.no_supervisory) reqs.push_back(supervisory_request(ctx, responses[i], instructions[i]));
  }
  return reqs;
}

/// Runs every enabled assessment call for one turn and returns one set per
/// crew agent. With no_360 no calls are made and every set is empty.
inline std::vector<ReviewSet> run_round(const Context& ctx, int turn,
                                        std::span<const SubTaskInstruction> instructions,
                                        std::span<const TurnResponse> responses) {
  if (instructions.size() != responses.size())
    throw Error(ErrorCode::cardinality_error, "responses", "one response per crew agent required");
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (responses[i].turn != turn || responses[i].crew_index != instructions[i].crew_index)
      throw Error(ErrorCode::cardinality_error, "responses",
                  "response " + std::to_string(i) + " is not crew " + std::to_string(instructions[i].crew_index) +
                      " at turn " + std::to_string(turn));
  }
  auto reqs = round_requests(ctx, instructions, responses);
  auto results = ctx.gateway.complete_all(reqs);

  std::map<int, std::vector<Review>> by_crew;
  for (std::size_t k = 0; k < reqs.size(); ++k) {
    auto review = review_from(reqs[k], std::move(results[k].text));
    by_crew[review.reviewee].push_back(std::move(review));
  }
  std::vector<ReviewSet> sets;
  const int n = static_cast<int>(responses.size());
  for (const auto& resp : responses) {
    if (ctx.config.ablations.effective().no_360) {
      sets.push_back(ReviewSet{resp.crew_index, turn, std::nullopt, {}, std::nullopt});
      continue;
    }
    sets.push_back(assemble_review_set(resp.crew_index, turn, std::move(by_crew[resp.crew_index]), n,
                                       ctx.config.ablations));
  }
  return sets;
}

/// Expected number of assessment calls in one round.
inline int round_call_count(int crews, const Ablations& ablations) {
  const auto eff = ablations.effective();
  if (eff.no_360) return 0;
  int calls = 0;
  if (!eff.no_self) calls += crews;
  if (!eff.no_peer) calls += crews * (crews - 1);
  if (!eff.no_supervisory) calls += crews;
  return calls;
}

/// Renders a review set as prompt text in canonical order.
inline std::string format_reviews(const ReviewSet& set) {
  std::string out;
  for (const auto* r : set.ordered()) {
    if (!out.empty()) out += "\n\n";
    switch (r->kind) {
      case ReviewKind::self: out += "[Self review]\n"; break;
      case ReviewKind::peer: out += "[Peer review from crew agent " + std::to_string(r->reviewer) + "]\n"; break;
      case ReviewKind::supervisory: out += "[Supervisory review from the leader]\n"; break;
      case ReviewKind::leader_self: out += "[Leader self review]\n"; break;
    }
    out += r->text;
  }
  return out;
}

}  // namespace rea::assessment
