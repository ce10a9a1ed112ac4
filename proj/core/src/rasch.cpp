#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "diffcal/psychometrics.hpp"

namespace diffcal::irt {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? ", " : "") << ids[i];
  return os.str();
}

// Posterior summaries on the quadrature grid theta_k = sd * z_k.
struct EStep {
  double loglik = 0;
  std::vector<double> expected_n;  // [k * items + i], weighted attempts at node k
  std::vector<double> expected_r;  // [k * items + i], weighted correct at node k
  double second_moment = 0;        // sum_p w_p E[theta^2 | x_p]
  double total_weight = 0;
};

EStep run_e_step(const WeightedResponseMatrix& data, std::span<const double> b, double sd,
                 const QuadratureRule& rule, bool want_counts) {
  const std::size_t K = rule.nodes.size();
  const std::size_t I = data.num_items();
  std::vector<double> theta(K), log_v(K);
  for (std::size_t k = 0; k < K; ++k) {
    theta[k] = sd * rule.nodes[k];
    log_v[k] = std::log(rule.weights[k]);
  }
  std::vector<double> lp1(K * I), lp0(K * I);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < I; ++i) {
      const double eta = theta[k] - b[i];
      lp1[k * I + i] = log_sigmoid(eta);
      lp0[k * I + i] = log_sigmoid(-eta);
    }
  }

  EStep out;
  if (want_counts) {
    out.expected_n.assign(K * I, 0.0);
    out.expected_r.assign(K * I, 0.0);
  }
  std::vector<double> lk(K), post(K);
  for (std::size_t p = 0; p < data.num_persons(); ++p) {
    const auto& resp = data.responses[p];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      double s = log_v[k];
      const double* row1 = &lp1[k * I];
      const double* row0 = &lp0[k * I];
      for (const auto& r : resp) s += r.correct ? row1[r.item] : row0[r.item];
      lk[k] = s;
      mx = std::max(mx, s);
    }
    double total = 0;
    for (std::size_t k = 0; k < K; ++k) {
      post[k] = std::exp(lk[k] - mx);
      total += post[k];
    }
    const double w = data.weights[p];
    out.loglik += w * (mx + std::log(total));
    out.total_weight += w;
    if (!want_counts) continue;
    double m2 = 0;
    for (std::size_t k = 0; k < K; ++k) {
      post[k] /= total;
      m2 += post[k] * theta[k] * theta[k];
    }
    out.second_moment += w * m2;
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = w * post[k];
      double* n_row = &out.expected_n[k * I];
      double* r_row = &out.expected_r[k * I];
      for (const auto& r : resp) {
        n_row[r.item] += wk;
        if (r.correct) r_row[r.item] += wk;
      }
    }
  }
  return out;
}

void check_parameters(const WeightedResponseMatrix& data, std::span<const double> b,
                      AbilityDistribution ability, int nodes) {
  data.validate();
  if (b.size() != data.num_items())
    throw std::invalid_argument("difficulty vector does not match item count");
  for (double v : b)
    if (!std::isfinite(v)) throw std::invalid_argument("difficulties must be finite");
  if (!(ability.sd > 0) || !std::isfinite(ability.sd))
    throw std::invalid_argument("ability sd must be positive and finite");
  if (nodes < 1) throw std::invalid_argument("quadrature node count must be positive");
}

// Maximizes sum_k [R_ik (theta_k - b) - N_ik log(1 + exp(theta_k - b))] in b.
double newton_item_update(double b, std::size_t item, std::size_t items,
                          std::span<const double> theta, const EStep& e,
                          const RaschConfig& cfg) {
  double observed = 0;
  for (std::size_t k = 0; k < theta.size(); ++k) observed += e.expected_r[k * items + item];
  for (int t = 0; t < cfg.newton_max_iter; ++t) {
    double g = -observed, h = 0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double n = e.expected_n[k * items + item];
      const double p = sigmoid(theta[k] - b);
      g += n * p;
      h += n * p * (1 - p);
    }
    if (!(h > 0)) break;
    const double step = std::clamp(g / h, -1.0, 1.0);
    b += step;
    if (std::abs(step) < cfg.newton_tol) break;
  }
  return b;
}

}  // namespace

DegenerateItemError::DegenerateItemError(std::vector<std::string> ids)
    : std::invalid_argument("degenerate items (all responses correct or all incorrect): " +
                            join_ids(ids)),
      ids_(std::move(ids)) {}

void WeightedResponseMatrix::validate() const {
  if (responses.size() != persons.size() || weights.size() != persons.size())
    throw std::invalid_argument("response matrix: persons, responses and weights differ in size");
  for (std::size_t p = 0; p < persons.size(); ++p) {
    if (!(weights[p] > 0) || !std::isfinite(weights[p]))
      throw std::invalid_argument("response matrix: weight of '" + persons[p] + "' is not positive");
    for (const auto& r : responses[p]) {
      if (r.item >= items.size())
        throw std::invalid_argument("response matrix: item index out of range for '" + persons[p] + "'");
      if (r.correct > 1) throw std::invalid_argument("response matrix: response is not 0/1");
    }
  }
}

double marginal_loglik(const WeightedResponseMatrix& data, std::span<const double> difficulties,
                       AbilityDistribution ability, int nodes) {
  check_parameters(data, difficulties, ability, nodes);
  return run_e_step(data, difficulties, ability.sd, standard_normal_rule(nodes), false).loglik;
}

std::vector<double> marginal_loglik_gradient(const WeightedResponseMatrix& data,
                                             std::span<const double> difficulties,
                                             AbilityDistribution ability, int nodes) {
  check_parameters(data, difficulties, ability, nodes);
  const auto rule = standard_normal_rule(nodes);
  const auto e = run_e_step(data, difficulties, ability.sd, rule, true);
  const std::size_t I = data.num_items();
  std::vector<double> grad(I, 0.0);
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double theta = ability.sd * rule.nodes[k];
    for (std::size_t i = 0; i < I; ++i) {
      grad[i] += e.expected_n[k * I + i] * sigmoid(theta - difficulties[i]) - e.expected_r[k * I + i];
    }
  }
  return grad;
}

RaschFit rasch_em_fit(const WeightedResponseMatrix& data, const RaschConfig& config) {
  data.validate();
  if (config.quadrature_nodes < 1) throw std::invalid_argument("quadrature_nodes must be positive");
  if (config.max_iter < 1) throw std::invalid_argument("max_iter must be positive");
  if (!(config.tol > 0)) throw std::invalid_argument("tol must be positive");
  const std::size_t I = data.num_items();

  std::vector<double> total_w(I, 0.0), correct_w(I, 0.0);
  for (std::size_t p = 0; p < data.num_persons(); ++p) {
    if (data.responses[p].empty())
      throw std::invalid_argument("person '" + data.persons[p] + "' has no responses");
    for (const auto& r : data.responses[p]) {
      total_w[r.item] += data.weights[p];
      if (r.correct) correct_w[r.item] += data.weights[p];
    }
  }
  std::vector<std::string> degenerate;
  for (std::size_t i = 0; i < I; ++i) {
    if (correct_w[i] <= 0 || correct_w[i] >= total_w[i]) degenerate.push_back(data.items[i]);
  }
  if (!degenerate.empty()) throw DegenerateItemError(std::move(degenerate));

  std::vector<double> b(I);
  if (config.initial_difficulties) {
    if (config.initial_difficulties->size() != I)
      throw std::invalid_argument("initial_difficulties does not match item count");
    b = *config.initial_difficulties;
  } else {
    for (std::size_t i = 0; i < I; ++i) {
      const double q = 1.0 - correct_w[i] / total_w[i];
      b[i] = std::clamp(std::log(q / (1.0 - q)), -4.0, 4.0);
    }
  }
  double sd = config.initial_sd.value_or(1.0);
  if (!(sd > 0)) throw std::invalid_argument("initial sd must be positive");

  const auto rule = standard_normal_rule(config.quadrature_nodes);
  const std::size_t K = rule.nodes.size();
  RaschFit fit;
  fit.item_ids = data.items;
  fit.quadrature_nodes = config.quadrature_nodes;
  std::vector<double> theta(K), b_next(I);

  for (int iter = 0; iter < config.max_iter; ++iter) {
    const EStep e = run_e_step(data, b, sd, rule, true);
    fit.log_likelihood_trace.push_back(e.loglik);
    for (std::size_t k = 0; k < K; ++k) theta[k] = sd * rule.nodes[k];
    double delta = 0;
    for (std::size_t i = 0; i < I; ++i) {
      b_next[i] = newton_item_update(b[i], i, I, theta, e, config);
      delta = std::max(delta, std::abs(b_next[i] - b[i]));
    }
    const double sd_next =
        std::max(std::sqrt(e.second_moment / e.total_weight), std::numeric_limits<double>::min());
    delta = std::max(delta, std::abs(sd_next - sd));
    b.swap(b_next);
    sd = sd_next;
    fit.iterations = iter + 1;
    if (delta < config.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.log_likelihood_trace.push_back(run_e_step(data, b, sd, rule, false).loglik);

  fit.difficulties = std::move(b);
  fit.ability.sd = sd;
  fit.expected_p.reserve(I);
  for (double bi : fit.difficulties) fit.expected_p.push_back(expected_proportion_correct(bi, sd));
  return fit;
}

double expected_proportion_correct(double b, double sigma) {
  if (!(sigma > 0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be positive");
  if (!std::isfinite(b)) throw std::invalid_argument("b must be finite");
  // Substitute theta = sigma * z: the integral becomes
  // int logistic(sigma z - b) phi(z) dz over [-50/sigma, 50/sigma]. The
  // standard normal density underflows to zero beyond |z| = 40.
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  const double zmax = std::min(50.0 / sigma, 40.0);
  auto f = [&](double z) { return sigmoid(sigma * z - b) * kInvSqrt2Pi * std::exp(-0.5 * z * z); };
  using Integrator = boost::math::quadrature::gauss_kronrod<double, 61>;
  // Split at the density peak and at the logistic midpoint.
  std::vector<double> cuts{-zmax, 0.0, zmax};
  const double mid = b / sigma;
  if (mid > -zmax && mid < zmax && mid != 0.0) cuts.push_back(mid);
  std::sort(cuts.begin(), cuts.end());
  double total = 0;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    total += Integrator::integrate(f, cuts[s], cuts[s + 1], 15, 1e-14);
  }
  return total;
}

}  // namespace diffcal::irt
