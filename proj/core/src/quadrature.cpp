#include <cmath>
#include <numbers>
#include <stdexcept>

#include "diffcal/psychometrics.hpp"

namespace diffcal::irt {

QuadratureRule gauss_hermite_rule(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite_rule: n must be positive");
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  const auto un = static_cast<std::size_t>(n);
  std::vector<double> x(un), w(un);
  const int m = (n + 1) / 2;
  double z = 0;
  for (int i = 1; i <= m; ++i) {
    // Initial guesses for the largest roots, then extrapolation from the
    // previously found ones.
    if (i == 1) {
      z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
    } else if (i == 2) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 3) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 4) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[static_cast<std::size_t>(i - 3)];
    }
    double pp = 0;
    bool done = false;
    for (int it = 0; it < 100 && !done; ++it) {
      // Orthonormal Hermite recurrence.
      double p1 = pim4, p2 = 0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt(static_cast<double>(j - 1) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      done = std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z));
    }
    if (!done) throw std::runtime_error("gauss_hermite_rule: Newton iteration did not converge");
    x[static_cast<std::size_t>(i - 1)] = z;
    x[un - static_cast<std::size_t>(i)] = -z;
    w[static_cast<std::size_t>(i - 1)] = 2.0 / (pp * pp);
    w[un - static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i - 1)];
  }
  // Roots were produced from largest to smallest; return ascending order.
  QuadratureRule rule;
  rule.nodes.assign(x.rbegin(), x.rend());
  rule.weights.assign(w.rbegin(), w.rend());
  if (n % 2 == 1) rule.nodes[un / 2] = 0.0;
  return rule;
}

QuadratureRule standard_normal_rule(int n) {
  QuadratureRule rule = gauss_hermite_rule(n);
  const double node_scale = std::numbers::sqrt2;
  const double weight_scale = 1.0 / std::sqrt(std::numbers::pi);
  for (auto& x : rule.nodes) x *= node_scale;
  for (auto& w : rule.weights) w *= weight_scale;
  return rule;
}

}  // namespace diffcal::irt
