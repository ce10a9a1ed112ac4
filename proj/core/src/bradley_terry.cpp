#include "diffcal/bradley_terry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "diffcal/stats.hpp"

namespace diffcal::bt {
namespace {

std::string list(const std::vector<std::size_t>& v) {
  std::string s;
  for (auto i : v) s += (s.empty() ? "" : ",") + std::to_string(i);
  return s;
}

// log(exp(a) + exp(b))
double log_add(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Tarjan SCCs of the digraph with an edge i -> j whenever j has beaten i
// (w(j, i) > 0). Returned in reverse topological order.
std::vector<std::vector<std::size_t>> strong_components(const WinMatrix& w) {
  const std::size_t n = w.size();
  std::vector<int> index(n, -1), low(n, 0);
  std::vector<char> on_stack(n, 0);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> out;
  int counter = 0;
  std::function<void(std::size_t)> visit = [&](std::size_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = 1;
    for (std::size_t u = 0; u < n; ++u) {
      if (u == v || !(w(u, v) > 0)) continue;
      if (index[u] < 0) {
        visit(u);
        low[v] = std::min(low[v], low[u]);
      } else if (on_stack[u]) {
        low[v] = std::min(low[v], index[u]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::size_t> comp;
      std::size_t u;
      do {
        u = stack.back();
        stack.pop_back();
        on_stack[u] = 0;
        comp.push_back(u);
      } while (u != v);
      std::sort(comp.begin(), comp.end());
      out.push_back(std::move(comp));
    }
  };
  for (std::size_t v = 0; v < n; ++v)
    if (index[v] < 0) visit(v);
  return out;
}

std::vector<std::vector<std::size_t>> weak_components(const WinMatrix& w) {
  const std::size_t n = w.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (w(i, j) + w(j, i) > 0) parent[find(i)] = find(j);
  std::vector<std::vector<std::size_t>> comps;
  std::vector<long> slot(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    if (slot[r] < 0) {
      slot[r] = static_cast<long>(comps.size());
      comps.emplace_back();
    }
    comps[static_cast<std::size_t>(slot[r])].push_back(i);
  }
  return comps;
}

}  // namespace

void WinMatrix::add(std::size_t i, std::size_t j, double mass) { set(i, j, (*this)(i, j) + mass); }

void WinMatrix::set(std::size_t i, std::size_t j, double mass) {
  if (i >= n_ || j >= n_) throw std::out_of_range("win matrix index");
  if (i == j) throw std::invalid_argument("win matrix diagonal must stay zero");
  if (!(mass >= 0) || !std::isfinite(mass)) throw std::invalid_argument("win mass must be finite and non-negative");
  w_[i * n_ + j] = mass;
}

WinMatrix WinMatrix::transposed() const {
  WinMatrix t(n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) t.w_[j * n_ + i] = w_[i * n_ + j];
  return t;
}

WinMatrix WinMatrix::scaled(double c) const {
  if (!(c > 0)) throw std::invalid_argument("scale must be positive");
  WinMatrix s(*this);
  for (auto& x : s.w_) x *= c;
  return s;
}

std::pair<std::int64_t, std::int64_t> soft_to_pseudocounts(double p) {
  if (!(p >= 0 && p <= 1)) throw std::invalid_argument("probability outside [0, 1]");
  // nearbyint under the default rounding mode rounds ties to even.
  const auto c = static_cast<std::int64_t>(std::nearbyint(p * 1e6));
  return {c, 1000000 - c};
}

DisconnectedGraphError::DisconnectedGraphError(std::vector<std::vector<std::size_t>> components)
    : std::runtime_error([&] {
        std::string s = "comparison graph is disconnected; components:";
        for (const auto& c : components) s += " {" + list(c) + "}";
        return s;
      }()),
      components_(std::move(components)) {}

SeparationError::SeparationError(std::vector<std::size_t> group)
    : std::runtime_error("items {" + list(group) +
                         "} are never judged easier than the rest; the Bradley-Terry estimate does not "
                         "exist without smoothing (e.g. smoothing = 0.5)"),
      group_(std::move(group)) {}

double bt_loglik(const WinMatrix& w, std::span<const double> lambda) {
  double ll = 0;
  const std::size_t n = w.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && w(i, j) > 0) ll += w(i, j) * (lambda[i] - log_add(lambda[i], lambda[j]));
  return ll;
}

std::vector<double> bt_loglik_grad(const WinMatrix& w, std::span<const double> lambda) {
  const std::size_t n = w.size();
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double nij = w(i, j) + w(j, i);
      if (nij == 0) continue;
      const double p = 1.0 / (1.0 + std::exp(lambda[j] - lambda[i]));
      g[i] += w(i, j) - nij * p;
    }
  return g;
}

BTResult bt_fit(const WinMatrix& input, const BTConfig& config) {
  const std::size_t n = input.size();
  if (n < 2) throw std::invalid_argument("Bradley-Terry fit needs at least two items");
  if (config.smoothing < 0) throw std::invalid_argument("smoothing must be non-negative");
  WinMatrix w = input;
  if (config.smoothing > 0)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) w.add(i, j, config.smoothing);

  if (auto weak = weak_components(w); weak.size() > 1) throw DisconnectedGraphError(std::move(weak));
  if (auto strong = strong_components(w); strong.size() > 1) {
    // Tarjan emits sink components first; the sink of "j beat i" edges is a
    // group that beats others but is never beaten by them.
    throw SeparationError(strong.front());
  }

  std::vector<double> wins(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) wins[i] += w(i, j);

  BTResult res;
  std::vector<double> lambda(n, 0.0), next(n);
  for (int it = 0; it < config.max_iter; ++it) {
    res.loglik_trace.push_back(bt_loglik(w, lambda));
    // Hunter's MM update in log space: l_i <- log W_i - log sum_j n_ij / (e^l_i + e^l_j).
    for (std::size_t i = 0; i < n; ++i) {
      double denom = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double nij = w(i, j) + w(j, i);
        if (nij > 0) denom += nij * std::exp(-log_add(lambda[i], lambda[j]));
      }
      next[i] = std::log(wins[i]) - std::log(denom);
    }
    const double centre = std::accumulate(next.begin(), next.end(), 0.0) / static_cast<double>(n);
    double delta = 0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] -= centre;
      delta = std::max(delta, std::abs(next[i] - lambda[i]));
    }
    lambda.swap(next);
    res.iterations = it + 1;
    if (delta < config.tol) {
      res.converged = true;
      break;
    }
  }
  res.loglik = bt_loglik(w, lambda);
  res.loglik_trace.push_back(res.loglik);
  res.lambda = std::move(lambda);
  return res;
}

std::vector<double> ranking(std::span<const double> lambda) {
  std::vector<double> neg(lambda.begin(), lambda.end());
  for (auto& x : neg) x = -x;
  return stats::average_ranks(neg);
}

}  // namespace diffcal::bt
