#pragma once

// Match rate for creative writing, rubric evaluation and score parsing for
// both task kinds, and batch summaries.

#include <iomanip>
#include <map>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rea/backend.hpp"
#include "rea/domain.hpp"
#include "rea/prompts.hpp"
#include "rea/text.hpp"

namespace rea {

// ---------------------------------------------------------------------------
// Match rate

enum class MatchMode { substring, word_boundary };

namespace detail {

inline bool occurs(std::string_view hay, std::string_view needle, MatchMode mode) {
  if (needle.empty()) return false;
  if (mode == MatchMode::substring) return hay.find(needle) != std::string_view::npos;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) {
    bool left_ok = pos == 0 || !text::is_alnum(hay[pos - 1]);
    auto end = pos + needle.size();
    bool right_ok = end == hay.size() || !text::is_alnum(hay[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

}  // namespace detail

struct QuestionMatch {
  bool matched = false;
  std::string matched_alias;
};

/// Per-question coverage of `story`. A question is matched when any of its
/// normalized aliases occurs in the normalized story.
inline std::vector<QuestionMatch> match_breakdown(std::string_view story,
                                                  std::span<const AnswerSet> answer_sets,
                                                  MatchMode mode = MatchMode::substring) {
  const auto hay = text::normalize(story);
  std::vector<QuestionMatch> out;
  out.reserve(answer_sets.size());
  for (const auto& set : answer_sets) {
    QuestionMatch m;
    for (const auto& alias : set.aliases) {
      if (detail::occurs(hay, text::normalize_alias(alias), mode)) {
        m.matched = true;
        m.matched_alias = alias;
        break;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Percentage in [0, 100] of questions whose answer appears in the story.
inline double match_rate(std::string_view story, std::span<const AnswerSet> answer_sets,
                         MatchMode mode = MatchMode::substring) {
  if (answer_sets.empty()) throw Error(ErrorCode::empty_input_error, "answer_sets");
  std::size_t matched = 0;
  for (const auto& m : match_breakdown(story, answer_sets, mode)) matched += m.matched;
  return 100.0 * static_cast<double>(matched) / static_cast<double>(answer_sets.size());
}

// ---------------------------------------------------------------------------
// Rubrics

inline constexpr int kScaleMin = 1;
inline constexpr int kScaleMax = 20;

struct RubricCriterion {
  std::string name;   // short name used in reports, e.g. "P.Cu."
  std::string label;  // name the evaluator prints, e.g. "Plan Customization"
  std::string description;
};

struct Rubric {
  TemplateId template_id = TemplateId::evaluator_travel;
  std::vector<RubricCriterion> criteria;
};

inline const Rubric& writing_rubric() {
  static const Rubric r{TemplateId::evaluator_writing,
                        {{"E.E.", "Emotional Engagement", "the story evokes emotion and empathy"},
                         {"Ins", "Insightfulness", "the plot is insightful and leaves a lasting impact"}}};
  return r;
}

inline const Rubric& travel_rubric() {
  static const Rubric r{TemplateId::evaluator_travel,
                        {{"P.Cu.", "Plan Customization", "tailored to the travellers' interests"},
                         {"P.N.", "Plan Novelty", "novel and creative"},
                         {"P.Co.", "Plan Correctness", "complete and reasonable"}}};
  return r;
}

inline const Rubric& rubric_for(TaskKind kind) {
  return kind == TaskKind::creative_writing ? writing_rubric() : travel_rubric();
}

/// Report metric names in display order.
inline std::vector<std::string> metric_names(TaskKind kind) {
  if (kind == TaskKind::creative_writing) return {"M%", "E.E.", "Ins"};
  return {"P.Co.", "P.N.", "P.Cu."};
}

/// Maps a 1-20 rubric score onto a percentage.
inline double normalize_score(int score) {
  if (score < kScaleMin || score > kScaleMax)
    throw Error(ErrorCode::range_error, std::to_string(score), "score outside 1-20");
  return 100.0 * score / kScaleMax;
}

namespace detail {

inline std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

inline std::regex criterion_pattern(const RubricCriterion& c) {
  // Label or short name, an optional "(1-20)", a colon, then the score.
  // Markdown emphasis around any of the pieces is tolerated.
  std::string names = regex_escape(c.label);
  if (!c.name.empty() && c.name != c.label) names += "|" + regex_escape(c.name);
  std::string pat = R"((?:^|[^A-Za-z0-9]))" + std::string("(?:") + names + ")" +
                    R"([*_ \t]*(?:\([ \t]*1[ \t]*-[ \t]*20[ \t]*\))?[*_ \t]*:[*_ \t]*(-?[0-9]+))";
  return std::regex(pat, std::regex::ECMAScript | std::regex::icase);
}

}  // namespace detail

/// Extracts one integer score per configured criterion from evaluator text.
/// The first occurrence of a criterion followed by a number is used.
inline EvaluationReport parse_evaluation(const std::string& output, const Rubric& rubric) {
  struct Hit {
    std::size_t begin, end;
  };
  EvaluationReport report;
  report.overall_text = output;
  std::vector<Hit> hits;
  for (const auto& c : rubric.criteria) {
    std::smatch m;
    if (!std::regex_search(output, m, detail::criterion_pattern(c)))
      throw Error(ErrorCode::score_parse_error, c.name, "no score found for " + c.label);
    int score = 0;
    try {
      score = std::stoi(m[1].str());
    } catch (const std::exception&) {
      throw Error(ErrorCode::score_parse_error, c.name, "unparseable score '" + m[1].str() + "'");
    }
    if (score < kScaleMin || score > kScaleMax)
      throw Error(ErrorCode::score_parse_error, c.name,
                  "score " + std::to_string(score) + " outside 1-20");
    report.criteria.push_back({c.name, score, {}});
    hits.push_back({static_cast<std::size_t>(m.position(0)),
                    static_cast<std::size_t>(m.position(0) + m.length(0))});
  }
  // Rationale runs from a score to the next criterion heading.
  for (std::size_t i = 0; i < hits.size(); ++i) {
    std::size_t stop = output.size();
    for (const auto& h : hits)
      if (h.begin >= hits[i].end && h.begin < stop) stop = h.begin;
    report.criteria[i].rationale = std::string(text::trim(
        std::string_view(output).substr(hits[i].end, stop - hits[i].end)));
  }
  return report;
}

/// Renders the evaluator prompt for (x, y), asks the backend once and parses
/// the scores. Both the task text and the answer are shown to the evaluator.
inline EvaluationReport evaluate_rubric(Gateway& gateway, const PromptRegistry& prompts,
                                        const TaskQuery& task, const std::string& answer,
                                        const Rubric& rubric, const RunConfig& config) {
  Bindings b{{"total_task", render_task_text(task)}};
  b[rubric.template_id == TemplateId::evaluator_writing ? "Story" : "Travel_Plan"] = answer;
  CompletionRequest req;
  req.model_id = config.model_id;
  req.temperature = config.evaluator_temperature.value_or(config.temperature);
  req.tag.call_kind = CallKind::evaluate;
  req.messages = {{Role::system, "You are an impartial evaluator of multi-agent outputs."},
                  {Role::user, prompts.render(rubric.template_id, b)}};
  auto res = gateway.complete(std::move(req));
  return parse_evaluation(res.text, rubric);
}

// ---------------------------------------------------------------------------
// Batch summaries

struct MetricSample {
  TaskKind kind = TaskKind::creative_writing;
  std::map<std::string, double> metrics;
};

struct MetricSummary {
  double mean = 0.0;
  std::size_t n = 0;
};

struct BatchReport {
  TaskKind kind = TaskKind::creative_writing;
  std::map<std::string, MetricSummary> metrics;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, s] : metrics) j[name] = {{"mean", s.mean}, {"n", s.n}};
    return j;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(8) << "metric" << std::right << std::setw(10) << "mean"
       << std::setw(6) << "n" << "\n";
    for (const auto& name : ordered_names()) {
      const auto& s = metrics.at(name);
      os << std::left << std::setw(8) << name << std::right << std::setw(10) << std::fixed
         << std::setprecision(1) << s.mean << std::setw(6) << s.n << "\n";
    }
    return os.str();
  }

  std::vector<std::string> ordered_names() const {
    std::vector<std::string> out;
    for (const auto& n : metric_names(kind))
      if (metrics.contains(n)) out.push_back(n);
    for (const auto& [n, _] : metrics)
      if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    return out;
  }
};

inline BatchReport batch_report(std::span<const MetricSample> samples) {
  if (samples.empty()) throw Error(ErrorCode::empty_input_error, "outcomes", "no completed runs");
  BatchReport report;
  report.kind = samples.front().kind;
  std::map<std::string, double> sums;
  for (const auto& s : samples) {
    if (s.kind != report.kind)
      throw Error(ErrorCode::mixed_kind_error, std::string(to_string(s.kind)),
                  "batch mixes task kinds");
    for (const auto& [name, value] : s.metrics) {
      sums[name] += value;
      ++report.metrics[name].n;
    }
  }
  for (auto& [name, summary] : report.metrics)
    summary.mean = sums[name] / static_cast<double>(summary.n);
  return report;
}

}  // namespace rea
