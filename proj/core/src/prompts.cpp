#include <cmath>
#include <stdexcept>

#include "diffcal/elicitation.hpp"
#include "diffcal/embedded_prompts.hpp"

namespace diffcal::elicit {
namespace {

bool is_marker_char(char c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '%'; }

}  // namespace

std::string_view to_string(Format f) { return f == Format::absolute ? "absolute" : "pairwise"; }
std::string_view to_string(Decision d) { return d == Decision::hard ? "hard" : "soft"; }
std::string_view to_string(Prompting p) { return p == Prompting::zero_shot ? "zero_shot" : "few_shot"; }

Format parse_format(std::string_view s) {
  if (s == "absolute") return Format::absolute;
  if (s == "pairwise") return Format::pairwise;
  throw std::invalid_argument("unknown format '" + std::string(s) + "'");
}
Decision parse_decision(std::string_view s) {
  if (s == "hard") return Decision::hard;
  if (s == "soft") return Decision::soft;
  throw std::invalid_argument("unknown decision type '" + std::string(s) + "'");
}
Prompting parse_prompting(std::string_view s) {
  if (s == "zero_shot") return Prompting::zero_shot;
  if (s == "few_shot") return Prompting::few_shot;
  throw std::invalid_argument("unknown prompting strategy '" + std::string(s) + "'");
}

std::string DesignCell::condition() const {
  std::string out = model;
  for (auto part : {to_string(format), to_string(decision), to_string(prompting)}) {
    out += '/';
    out += part;
  }
  return out;
}

std::string DesignCell::id() const { return condition() + "/" + std::string(to_string(domain)); }

DesignCell parse_cell_id(std::string_view id) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto slash = id.find('/', start);
    parts.emplace_back(id.substr(start, slash == std::string_view::npos ? std::string_view::npos : slash - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  if (parts.size() != 5 || parts[0].empty()) throw std::invalid_argument("malformed cell id '" + std::string(id) + "'");
  return {parts[0], parse_format(parts[1]), parse_decision(parts[2]), parse_prompting(parts[3]), parse_domain(parts[4])};
}

std::vector<DesignCell> full_design(std::span<const std::string> models, std::span<const Domain> domains) {
  std::vector<DesignCell> out;
  for (const auto& m : models)
    for (auto d : domains)
      for (auto f : {Format::absolute, Format::pairwise})
        for (auto dec : {Decision::hard, Decision::soft})
          for (auto p : {Prompting::zero_shot, Prompting::few_shot}) out.push_back({m, f, dec, p, d});
  return out;
}

TemplateId template_for(Format f, Prompting p) {
  if (f == Format::absolute) return p == Prompting::zero_shot ? TemplateId::A : TemplateId::B;
  return p == Prompting::zero_shot ? TemplateId::C : TemplateId::D;
}

std::string_view template_system(TemplateId t) {
  using namespace embedded;
  switch (t) {
    case TemplateId::A: return k_absolute_zero_shot_system;
    case TemplateId::B: return k_absolute_few_shot_system;
    case TemplateId::C: return k_pairwise_zero_shot_system;
    case TemplateId::D: return k_pairwise_few_shot_system;
  }
  throw std::logic_error("bad template id");
}

std::string_view template_user(TemplateId t) {
  using namespace embedded;
  switch (t) {
    case TemplateId::A: return k_absolute_zero_shot_user;
    case TemplateId::B: return k_absolute_few_shot_user;
    case TemplateId::C: return k_pairwise_zero_shot_user;
    case TemplateId::D: return k_pairwise_few_shot_user;
  }
  throw std::logic_error("bad template id");
}

std::string_view template_name(TemplateId t) {
  switch (t) {
    case TemplateId::A: return "absolute_zero_shot";
    case TemplateId::B: return "absolute_few_shot";
    case TemplateId::C: return "pairwise_zero_shot";
    case TemplateId::D: return "pairwise_few_shot";
  }
  throw std::logic_error("bad template id");
}

std::string format_percent(double p) {
  if (!(p >= 0 && p <= 1)) throw std::invalid_argument("proportion outside [0, 1]");
  // The epsilon keeps values such as 0.145 (stored as 0.14499...) rounding up.
  const auto pct = static_cast<long>(std::floor(p * 100.0 + 0.5 + 1e-9));
  return std::to_string(pct) + "%";
}

std::string substitute(std::string_view tpl, const std::map<std::string, std::string>& values,
                       std::set<std::string>* unresolved) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '<') {
      std::size_t j = i + 1;
      while (j < tpl.size() && is_marker_char(tpl[j])) ++j;
      if (j > i + 1 && j < tpl.size() && tpl[j] == '>') {
        const std::string name(tpl.substr(i + 1, j - i - 1));
        if (const auto it = values.find(name); it != values.end()) {
          out += it->second;
        } else {
          if (unresolved) unresolved->insert(name);
          out.append(tpl.substr(i, j - i + 1));
        }
        i = j + 1;
        continue;
      }
    }
    out += tpl[i++];
  }
  return out;
}

PromptBundle build_prompt(TemplateId t, std::span<const PromptItem> items, int grade, Domain domain,
                          const std::optional<std::array<Anchor, 2>>& anchors) {
  const bool pairwise = t == TemplateId::C || t == TemplateId::D;
  const bool few_shot = t == TemplateId::B || t == TemplateId::D;
  if (items.size() != (pairwise ? 2u : 1u))
    throw std::invalid_argument(std::string(template_name(t)) + " expects " + (pairwise ? "2 items" : "1 item"));
  if (few_shot && !anchors) throw ConfigError(std::string(template_name(t)) + " needs two anchor items");

  std::map<std::string, std::string> v;
  v["GRADE"] = std::to_string(grade);
  v["DOMAIN"] = std::string(display_name(domain));
  if (pairwise) {
    v["TIME_LIMIT"] = std::to_string(std::max(items[0].time_limit_seconds, items[1].time_limit_seconds));
    v["TASK_A_TEXT"] = items[0].text;
    v["TASK_B_TEXT"] = items[1].text;
  } else {
    v["TIME_LIMIT"] = std::to_string(items[0].time_limit_seconds);
    v["TASK_TEXT"] = items[0].text;
  }
  if (few_shot) {
    v["EXAMPLE_TASK_1_TEXT"] = (*anchors)[0].text;
    v["EXAMPLE_1_DIFFICULTY_%"] = format_percent((*anchors)[0].expected_p);
    v["EXAMPLE_TASK_2_TEXT"] = (*anchors)[1].text;
    v["EXAMPLE_2_DIFFICULTY_%"] = format_percent((*anchors)[1].expected_p);
  }
  std::set<std::string> unresolved;
  PromptBundle b;
  b.system_message = substitute(template_system(t), v, &unresolved);
  b.user_message = substitute(template_user(t), v, &unresolved);
  b.placeholders_resolved = unresolved.empty();
  if (!b.placeholders_resolved) throw ConfigError("unresolved placeholder <" + *unresolved.begin() + ">");
  return b;
}

}  // namespace diffcal::elicit
