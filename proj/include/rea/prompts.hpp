#pragma once

// Prompt template registry. Bodies use single-brace {name} slots; "{{" and
// "}}" render as literal braces. Template files may start with "#!" header
// lines, which are metadata and not part of the body.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rea/embedded_prompts.hpp"
#include "rea/error.hpp"
#include "rea/text.hpp"

namespace rea {

enum class TemplateId {
  decompose,
  crew_generate,
  assess_self,
  assess_peer,
  assess_supervisory,
  leader_self,
  synthesize,
  local_experience,
  global_experience,
  evaluator_travel,
  evaluator_writing,
};

inline constexpr std::array<TemplateId, 11> kAllTemplates{
    TemplateId::decompose,         TemplateId::crew_generate,     TemplateId::assess_self,
    TemplateId::assess_peer,       TemplateId::assess_supervisory, TemplateId::leader_self,
    TemplateId::synthesize,        TemplateId::local_experience,  TemplateId::global_experience,
    TemplateId::evaluator_travel,  TemplateId::evaluator_writing,
};

constexpr std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::decompose: return "decompose";
    case TemplateId::crew_generate: return "crew_generate";
    case TemplateId::assess_self: return "assess_self";
    case TemplateId::assess_peer: return "assess_peer";
    case TemplateId::assess_supervisory: return "assess_supervisory";
    case TemplateId::leader_self: return "leader_self";
    case TemplateId::synthesize: return "synthesize";
    case TemplateId::local_experience: return "local_experience";
    case TemplateId::global_experience: return "global_experience";
    case TemplateId::evaluator_travel: return "evaluator_travel";
    case TemplateId::evaluator_writing: return "evaluator_writing";
  }
  return "?";
}

inline std::optional<TemplateId> parse_template_id(std::string_view s) {
  for (auto id : kAllTemplates)
    if (to_string(id) == s) return id;
  return std::nullopt;
}

using Bindings = std::map<std::string, std::string, std::less<>>;

struct TemplateSegment {
  bool is_placeholder = false;
  std::string text;  // literal text, or the placeholder name
};

namespace detail {

inline bool ident_start(char c) { return c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

}  // namespace detail

/// Splits a body into literal and placeholder segments. A '{' that does not
/// open a well-formed {identifier} slot is kept as literal text.
inline std::vector<TemplateSegment> parse_template(std::string_view body) {
  std::vector<TemplateSegment> segs;
  std::string literal;
  auto flush = [&] {
    if (!literal.empty()) segs.push_back({false, std::move(literal)});
    literal.clear();
  };
  for (std::size_t i = 0; i < body.size();) {
    char c = body[i];
    if (c == '{' && i + 1 < body.size() && body[i + 1] == '{') {
      literal.push_back('{');
      i += 2;
      continue;
    }
    if (c == '}' && i + 1 < body.size() && body[i + 1] == '}') {
      literal.push_back('}');
      i += 2;
      continue;
    }
    if (c == '{' && i + 1 < body.size() && detail::ident_start(body[i + 1])) {
      std::size_t j = i + 1;
      while (j < body.size() && detail::ident_char(body[j])) ++j;
      if (j < body.size() && body[j] == '}') {
        flush();
        segs.push_back({true, std::string(body.substr(i + 1, j - i - 1))});
        i = j + 1;
        continue;
      }
    }
    literal.push_back(c);
    ++i;
  }
  flush();
  return segs;
}

inline std::set<std::string> placeholders_in(std::string_view body) {
  std::set<std::string> names;
  for (const auto& s : parse_template(body))
    if (s.is_placeholder) names.insert(s.text);
  return names;
}

struct PromptTemplate {
  TemplateId id = TemplateId::decompose;
  std::string body;
  std::set<std::string> required_placeholders;
  // True when the file header marks the body as authored in-repo rather
  // than transcribed.
  bool reconstructed = false;
};

/// Strips "#!" header lines from raw template file text.
inline PromptTemplate parse_template_file(TemplateId id, std::string_view raw) {
  PromptTemplate t;
  t.id = id;
  std::string_view rest = raw;
  while (rest.starts_with("#!")) {
    auto nl = rest.find('\n');
    auto header = rest.substr(0, nl);
    if (text::contains(header, "reconstructed")) t.reconstructed = true;
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
  }
  t.body = std::string(rest);
  // Files end with a newline that is not part of the prompt.
  while (!t.body.empty() && (t.body.back() == '\n' || t.body.back() == '\r')) t.body.pop_back();
  t.required_placeholders = placeholders_in(t.body);
  return t;
}

class PromptRegistry {
 public:
  /// Templates compiled in from the prompts/ directory.
  static const PromptRegistry& builtin() {
    static const PromptRegistry registry = [] {
      PromptRegistry r;
      for (const auto& [name, raw] : embedded_prompts::kFiles) {
        auto id = parse_template_id(name);
        if (id) r.templates_[*id] = parse_template_file(*id, raw);
      }
      r.check_complete("<embedded>");
      return r;
    }();
    return registry;
  }

  /// Loads `<id>.txt` for every template id from a directory.
  static PromptRegistry load_directory(const std::filesystem::path& dir) {
    PromptRegistry r;
    for (auto id : kAllTemplates) {
      auto path = dir / (std::string(to_string(id)) + ".txt");
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error(ErrorCode::io_error, path.string(), "missing prompt template file");
      std::ostringstream ss;
      ss << in.rdbuf();
      r.templates_[id] = parse_template_file(id, ss.str());
    }
    return r;
  }

  const PromptTemplate& get(TemplateId id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw Error(ErrorCode::unknown_template, std::string(to_string(id)));
    return it->second;
  }

  const PromptTemplate& get(std::string_view name) const {
    auto id = parse_template_id(name);
    if (!id) throw Error(ErrorCode::unknown_template, std::string(name));
    return get(*id);
  }

  std::set<std::string> list_placeholders(TemplateId id) const { return placeholders_in(get(id).body); }
  std::set<std::string> list_placeholders(std::string_view name) const {
    return placeholders_in(get(name).body);
  }

  std::string render(TemplateId id, const Bindings& bindings) const {
    return render_body(get(id).body, bindings);
  }

  /// Substitutes every slot in one pass; bound values are never re-scanned,
  /// so text that merely looks like a slot inside a value is left alone.
  static std::string render_body(std::string_view body, const Bindings& bindings) {
    auto segs = parse_template(body);
    for (const auto& s : segs)
      if (s.is_placeholder && !bindings.contains(s.text))
        throw Error(ErrorCode::missing_placeholder, s.text);
    std::string out;
    for (const auto& s : segs) {
      if (!s.is_placeholder) {
        out += s.text;
        continue;
      }
      auto it = bindings.find(s.text);
      if (it == bindings.end()) throw Error(ErrorCode::unresolved_placeholder, s.text);
      out += it->second;
    }
    return out;
  }

 private:
  void check_complete(const std::string& where) const {
    for (auto id : kAllTemplates)
      if (!templates_.contains(id))
        throw Error(ErrorCode::unknown_template, std::string(to_string(id)), "not found in " + where);
  }

  std::map<TemplateId, PromptTemplate> templates_;
};

/// Line-level whitespace normalization for golden comparisons: trailing
/// whitespace per line and trailing blank lines are ignored.
inline std::string normalize_lines(std::string_view s) {
  auto lines = text::split_lines(s);
  for (auto& l : lines) {
    while (!l.empty() && text::is_space(l.back())) l.pop_back();
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return text::join(lines, "\n");
}

}  // namespace rea
