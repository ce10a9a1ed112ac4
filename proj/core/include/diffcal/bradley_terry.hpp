#pragma once

// Bradley-Terry fitting for hard or fractional win matrices:
// P(i judged harder than j) = exp(l_i) / (exp(l_i) + exp(l_j)), sum(l) = 0.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace diffcal::bt {

class WinMatrix {
 public:
  explicit WinMatrix(std::size_t n = 0) : n_(n), w_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return w_[i * n_ + j]; }
  // Adds mass to "i judged harder than j".
  void add(std::size_t i, std::size_t j, double mass);
  void set(std::size_t i, std::size_t j, double mass);

  WinMatrix transposed() const;
  WinMatrix scaled(double c) const;

 private:
  std::size_t n_;
  std::vector<double> w_;
};

// round(p, 6 decimals) * 1e6 with ties to even, and its complement.
std::pair<std::int64_t, std::int64_t> soft_to_pseudocounts(double p_first_harder);

struct BTConfig {
  double tol = 1e-10;  // on max |delta lambda| between iterations
  int max_iter = 1000;
  double smoothing = 0.0;  // added to every ordered pair (i, j), i != j
};

struct BTResult {
  std::vector<double> lambda;  // higher = harder, sum zero
  bool converged = false;
  double loglik = 0;
  int iterations = 0;
  std::vector<double> loglik_trace;  // at the start of every iteration, then the final value
};

// Comparison graph split into components (item indices).
class DisconnectedGraphError : public std::runtime_error {
 public:
  explicit DisconnectedGraphError(std::vector<std::vector<std::size_t>> components);
  const std::vector<std::vector<std::size_t>>& components() const { return components_; }

 private:
  std::vector<std::vector<std::size_t>> components_;
};

// Connected, but some group of items never loses (or never wins) against the
// rest, so the maximum-likelihood estimate does not exist.
class SeparationError : public std::runtime_error {
 public:
  explicit SeparationError(std::vector<std::size_t> undefeated_group);
  const std::vector<std::size_t>& group() const { return group_; }

 private:
  std::vector<std::size_t> group_;
};

BTResult bt_fit(const WinMatrix& w, const BTConfig& config = {});

double bt_loglik(const WinMatrix& w, std::span<const double> lambda);
std::vector<double> bt_loglik_grad(const WinMatrix& w, std::span<const double> lambda);

// Average ranks by descending lambda; 1 = hardest.
std::vector<double> ranking(std::span<const double> lambda);
inline std::vector<double> ranking(const BTResult& r) { return ranking(r.lambda); }

}  // namespace diffcal::bt
