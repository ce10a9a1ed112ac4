#include "diffcal/elicitation.hpp"

namespace diffcal::elicit {

std::optional<double> parse_bracket_output(std::string_view raw, Format format) {
  const auto open = raw.find("[[");
  if (open == std::string_view::npos) return std::nullopt;
  const auto close = raw.find("]]", open + 2);
  if (close == std::string_view::npos) return std::nullopt;
  const auto body = tokens::trim(raw.substr(open + 2, close - open - 2));
  if (body == "0") return 0.0;
  if (body == "1") return 1.0;
  if (format == Format::pairwise) return std::nullopt;
  if (body == "1.0") return 1.0;
  if (body.size() == 3 && body[0] == '0' && body[1] == '.' && body[2] >= '0' && body[2] <= '9')
    return (body[2] - '0') / 10.0;
  return std::nullopt;
}

std::optional<DecisionPositions> locate_decision(const llm::CompletionResponse& response, Format format) {
  const auto& pos = response.positions;
  if (pos.empty()) return std::nullopt;
  std::string text;
  std::vector<std::size_t> start(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    start[i] = text.size();
    text += pos[i].token;
  }
  const auto open = text.find("[[");
  if (open == std::string::npos) return std::nullopt;
  const auto inner = open + 2;
  const auto close = text.find("]]", inner);
  const auto inner_end = close == std::string::npos ? text.size() : close;

  // Non-blank tokens that start inside the brackets.
  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < pos.size(); ++i)
    if (start[i] >= inner && start[i] < inner_end && !tokens::trim(pos[i].token).empty()) inside.push_back(i);
  if (inside.empty()) return std::nullopt;

  DecisionPositions d;
  const auto lead = tokens::trim(pos[inside[0]].token);
  if (lead != "0" && lead != "1") return std::nullopt;
  d.leading = inside[0];
  if (format == Format::absolute && inside.size() >= 2) {
    if (tokens::trim(pos[inside[1]].token) != ".") return std::nullopt;
    d.dot = inside[1];
    if (inside.size() < 3) return std::nullopt;
    const auto digit = tokens::trim(pos[inside[2]].token);
    if (digit.size() != 1 || digit[0] < '0' || digit[0] > '9') return std::nullopt;
    d.digit = inside[2];
  } else if (format == Format::pairwise && inside.size() > 1) {
    return std::nullopt;
  }
  return d;
}

}  // namespace diffcal::elicit
