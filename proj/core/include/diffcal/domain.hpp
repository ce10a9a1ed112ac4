#pragma once

#include <array>
#include <string_view>

namespace diffcal {

enum class Domain {
  addition,
  subtraction,
  multiplication,
  division,
  calculation_order,
  text_problems,
};

inline constexpr std::array<Domain, 6> kAllDomains = {
    Domain::addition,          Domain::subtraction,   Domain::multiplication,
    Domain::division,          Domain::calculation_order, Domain::text_problems,
};

// Identifier form, e.g. "calculation_order".
std::string_view to_string(Domain d);
// Form used inside prompts, e.g. "calculation order".
std::string_view display_name(Domain d);
// Accepts either form; throws std::invalid_argument otherwise.
Domain parse_domain(std::string_view text);

// Default grade level of each domain.
int default_grade(Domain d);

}  // namespace diffcal
