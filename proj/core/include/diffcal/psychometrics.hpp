#pragma once

// Rasch calibration by marginal maximum likelihood (EM over a Gauss-Hermite
// grid) and the conversion from logit difficulty to expected proportion
// correct under a N(0, sigma) ability population.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffcal::irt {

// Physicists' Gauss-Hermite rule: sum_k weights[k] f(nodes[k]) approximates
// the integral of exp(-x^2) f(x). Nodes ascending.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

QuadratureRule gauss_hermite_rule(int n);

// The same rule rescaled for expectations under N(0, 1):
// nodes * sqrt(2), weights / sqrt(pi).
QuadratureRule standard_normal_rule(int n);

struct Response {
  std::uint32_t item = 0;
  std::uint8_t correct = 0;
};

// Sessions recoded as pseudo-persons, each carrying a positive weight.
struct WeightedResponseMatrix {
  std::vector<std::string> persons;
  std::vector<std::string> items;
  std::vector<std::vector<Response>> responses;  // one list per person
  std::vector<double> weights;                   // one per person

  std::size_t num_persons() const { return persons.size(); }
  std::size_t num_items() const { return items.size(); }

  // Throws std::invalid_argument on out-of-range indices, non-binary
  // responses, non-positive weights or mismatched sizes.
  void validate() const;
};

struct AbilityDistribution {
  static constexpr double mean = 0.0;
  double sd = 1.0;
};

struct RaschConfig {
  int quadrature_nodes = 60;
  double tol = 1e-5;
  int max_iter = 100;
  int newton_max_iter = 25;
  double newton_tol = 1e-8;
  // Overrides the logit-of-proportion-incorrect starting values.
  std::optional<std::vector<double>> initial_difficulties;
  std::optional<double> initial_sd;
};

struct RaschFit {
  std::vector<std::string> item_ids;
  std::vector<double> difficulties;
  AbilityDistribution ability;
  std::vector<double> expected_p;
  // Marginal log-likelihood at the start of every EM iteration, followed by
  // its value at the returned estimates.
  std::vector<double> log_likelihood_trace;
  bool converged = false;
  int iterations = 0;
  int quadrature_nodes = 0;
};

// Items whose weighted responses are all correct or all incorrect.
class DegenerateItemError : public std::invalid_argument {
 public:
  explicit DegenerateItemError(std::vector<std::string> ids);
  const std::vector<std::string>& item_ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

RaschFit rasch_em_fit(const WeightedResponseMatrix& data, const RaschConfig& config = {});

double marginal_loglik(const WeightedResponseMatrix& data, std::span<const double> difficulties,
                       AbilityDistribution ability, int nodes = 60);

// d marginal_loglik / d b_i.
std::vector<double> marginal_loglik_gradient(const WeightedResponseMatrix& data,
                                             std::span<const double> difficulties,
                                             AbilityDistribution ability, int nodes = 60);

// Integral over [-50, 50] of logistic(theta - b) * N(theta; 0, sigma).
double expected_proportion_correct(double b, double sigma);

}  // namespace diffcal::irt
