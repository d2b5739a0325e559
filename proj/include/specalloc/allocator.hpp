#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cost_model.hpp"
#include "roots.hpp"

namespace specalloc {

class allocation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Task probabilities (or probability-weighted utilities), sorted non-increasing.
class TaskProbabilityDistribution {
 public:
  /// Equal-probability block of consecutive tasks.
  struct Run {
    double p;
    std::size_t begin;
    std::size_t count;
  };

  TaskProbabilityDistribution() = default;

  /// `p` must already be sorted non-increasing with every entry > 0.
  explicit TaskProbabilityDistribution(std::vector<double> p) : p_(std::move(p)) {
    for (std::size_t i = 0; i < p_.size(); ++i) {
      if (!(p_[i] > 0.0) || !std::isfinite(p_[i]))
        throw std::invalid_argument("TaskProbabilityDistribution: entry " + std::to_string(i) +
                                    " is not a positive finite value");
      if (i > 0 && p_[i] > p_[i - 1])
        throw std::invalid_argument("TaskProbabilityDistribution: not sorted non-increasing at " +
                                    std::to_string(i));
    }
    index();
  }

  /// Sorts descending; equal values keep their input order.
  static TaskProbabilityDistribution from_unsorted(std::vector<double> p) {
    std::stable_sort(p.begin(), p.end(), std::greater<>());
    return TaskProbabilityDistribution(std::move(p));
  }

  std::size_t size() const { return p_.size(); }
  bool empty() const { return p_.empty(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> values() const { return p_; }
  const std::vector<Run>& runs() const { return runs_; }
  double sum() const { return prefix_.empty() ? 0.0 : prefix_.back(); }
  /// Sum of the first k entries.
  double prefix_sum(std::size_t k) const { return k == 0 ? 0.0 : prefix_[k - 1]; }

 private:
  void index() {
    prefix_.resize(p_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p_.size(); ++i) {
      acc += p_[i];
      prefix_[i] = acc;
      if (runs_.empty() || runs_.back().p != p_[i])
        runs_.push_back({p_[i], i, 1});
      else
        ++runs_.back().count;
    }
  }

  std::vector<double> p_;
  std::vector<double> prefix_;
  std::vector<Run> runs_;
};

/// A resource split over a TaskProbabilityDistribution. `w` is parallel to the
/// distribution; the first `m_star` entries are funded, the rest are zero.
struct Allocation {
  std::size_t m_star = 0;
  std::vector<double> w;
  double lambda = 0.0;
  double expected_throughput = 0.0;

  double total() const { return std::accumulate(w.begin(), w.end(), 0.0); }
};

/// Best single-share policy: every funded task gets `w_best`.
struct ConstantAllocation {
  double w_best = 0.0;
  std::size_t tasks = 0;
  double throughput = 0.0;
};

enum class ScanStrategy {
  exhaustive,  // every task count, warm-started, stopped at the first dominated count
  bounded,     // evaluate only task counts whose Lagrangian dual bound can still win
};

struct AllocatorOptions {
  ScanStrategy scan = ScanStrategy::exhaustive;
  double budget_rel_tol = 1e-10;
};

/// Sum over funded tasks of p_i / T(w_i).
template <TimeModel Model>
double expected_throughput(const TaskProbabilityDistribution& dist, std::span<const double> w,
                           const Model& model) {
  if (w.size() > dist.size())
    throw std::invalid_argument("expected_throughput: more shares than tasks");
  double r = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] < 0.0 || std::isnan(w[i]))
      throw std::invalid_argument("expected_throughput: negative share at " + std::to_string(i));
    if (w[i] > 0.0) r += dist[i] / model.time(w[i]);
  }
  return r;
}

namespace detail {

// Budget equation for the top-M prefix, solved in mu = -lambda >= 0.
// Shares are w(p) = clamp(F^{-1}(mu/p), w_lo, w_max), evaluated once per run of
// equal probabilities and warm-started from the previous evaluation.
template <TimeModel Model>
class PrefixSolver {
 public:
  PrefixSolver(const TaskProbabilityDistribution& dist, const Model& model)
      : dist_(dist), model_(model), warm_(dist.runs().size(), model.w_max()),
        f_lo_(model.efficiency(model.w_lo())) {}

  // Runs covering tasks [0, M), the last one possibly truncated.
  std::size_t run_count(std::size_t m) const {
    const auto& runs = dist_.runs();
    std::size_t r = 0;
    while (r < runs.size() && runs[r].begin < m) ++r;
    return r;
  }
  std::size_t count_in(std::size_t r, std::size_t m) const {
    const auto& run = dist_.runs()[r];
    return std::min(run.count, m - run.begin);
  }

  double share(std::size_t r, double mu) {
    const double y = mu / dist_.runs()[r].p;
    const double w = model_.invert_efficiency(y, warm_[r]);
    warm_[r] = w;
    return w;
  }

  struct Budget {
    double value;
    double slope;
  };

  Budget budget(std::size_t m, std::size_t nruns, double mu) {
    double total = 0.0, slope = 0.0;
    const double lo = model_.w_lo(), hi = model_.w_max();
    for (std::size_t r = 0; r < nruns; ++r) {
      const double c = static_cast<double>(count_in(r, m));
      const double w = share(r, mu);
      total += c * w;
      if (w > lo && w < hi) {
        const double p = dist_.runs()[r].p;
        slope += c / (p * model_.efficiency_derivative(w));
      }
    }
    return {total, slope};
  }

  // Multiplier mu for which the top-m shares sum to `target` (target < m*w_max).
  double solve(std::size_t m, double target, double mu_guess, double rel_tol) {
    const std::size_t nruns = run_count(m);
    const double mu_hi = dist_[0] * f_lo_;
    auto fdf = [&](double mu) {
      const Budget b = budget(m, nruns, mu);
      return std::pair{b.value - target, b.slope};
    };
    const double at_hi = budget(m, nruns, mu_hi).value - target;
    if (at_hi > rel_tol * target)
      throw allocation_error("solve_lambda: no bracketing multiplier (budget below m*w_lo)");
    if (at_hi >= 0.0) return mu_hi;
    RootOptions opt;
    opt.x_rel_tol = 1e-15;
    opt.f_abs_tol = rel_tol * target;
    return safeguarded_newton(fdf, 0.0, mu_hi, mu_guess, opt);
  }

  // Throughput of the top-m prefix at multiplier mu.
  double value(std::size_t m, double mu) {
    const std::size_t nruns = run_count(m);
    double r = 0.0;
    for (std::size_t k = 0; k < nruns; ++k) {
      const double c = static_cast<double>(count_in(k, m));
      r += c * dist_.runs()[k].p / model_.time(share(k, mu));
    }
    return r;
  }

  // p*g(w) - mu*w per run, the Lagrangian contribution of one task.
  double dual_term(std::size_t r, double mu) {
    const double w = share(r, mu);
    return dist_.runs()[r].p / model_.time(w) - mu * w;
  }

  bool last_clamped_low(std::size_t m, double mu) const {
    return mu / dist_[m - 1] >= f_lo_;
  }

  std::vector<double> shares(std::size_t m, double mu) {
    std::vector<double> w(m);
    const std::size_t nruns = run_count(m);
    for (std::size_t r = 0; r < nruns; ++r) {
      const double s = share(r, mu);
      const auto& run = dist_.runs()[r];
      std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(run.begin), count_in(r, m), s);
    }
    return w;
  }

 private:
  const TaskProbabilityDistribution& dist_;
  const Model& model_;
  std::vector<double> warm_;
  double f_lo_;
};

inline std::size_t saturated_count(std::size_t n, double budget, double w_max) {
  const double k = std::floor(budget / w_max * (1.0 + 1e-12));
  return static_cast<std::size_t>(std::min<double>(static_cast<double>(n), k));
}

inline std::size_t feasible_count(std::size_t n, double budget, double w_lo) {
  const double k = std::floor(budget / w_lo * (1.0 + 1e-12));
  return static_cast<std::size_t>(std::min<double>(static_cast<double>(n), k));
}

inline void check_inputs(const TaskProbabilityDistribution& dist, double budget,
                         const char* what) {
  if (dist.empty()) throw std::invalid_argument(std::string(what) + ": empty distribution");
  if (!(budget > 0.0) || !std::isfinite(budget))
    throw std::invalid_argument(std::string(what) + ": budget must be positive");
}

}  // namespace detail

struct LambdaSolution {
  double lambda = 0.0;
  std::vector<double> shares;
};

/// Funds exactly the top `m` tasks with budget min(N, m*w_max): finds lambda with
/// p_i F(w_i) + lambda = 0 for every interior share; shares that would fall
/// below w_lo (or above w_max) sit on that bound.
template <TimeModel Model>
LambdaSolution solve_lambda(const TaskProbabilityDistribution& dist, std::size_t m,
                            double budget, const Model& model,
                            const AllocatorOptions& opt = {}) {
  detail::check_inputs(dist, budget, "solve_lambda");
  if (m < 1 || m > dist.size())
    throw std::invalid_argument("solve_lambda: task count out of range");
  const double m_d = static_cast<double>(m);
  if (m_d * model.w_max() <= budget) return {0.0, std::vector<double>(m, model.w_max())};
  detail::PrefixSolver<Model> solver(dist, model);
  const double mu = solver.solve(m, budget, 0.0, opt.budget_rel_tol);
  return {-mu, solver.shares(m, mu)};
}

/// Maximizes expected throughput over the task count and the shares.
/// Ties in throughput go to the smaller task count.
template <TimeModel Model>
Allocation optimal_allocation(const TaskProbabilityDistribution& dist, double budget,
                              const Model& model, const AllocatorOptions& opt = {}) {
  detail::check_inputs(dist, budget, "optimal_allocation");
  const std::size_t n = dist.size();
  const std::size_t m_sat = detail::saturated_count(n, budget, model.w_max());
  const std::size_t m_hi = detail::feasible_count(n, budget, model.w_lo());
  const bool stop_at_clamp = model.low_clamp_dominated();

  std::size_t best_m = 0;
  double best_mu = 0.0;
  double best_r = 0.0;
  if (m_sat >= 1) {
    best_m = m_sat;
    best_r = dist.prefix_sum(m_sat) / model.time(model.w_max());
  }

  detail::PrefixSolver<Model> solver(dist, model);
  auto consider = [&](std::size_t m, double mu) {
    const double r = solver.value(m, mu);
    if (r > best_r || (r == best_r && m < best_m)) {
      best_r = r;
      best_m = m;
      best_mu = mu;
    }
    return r;
  };

  if (m_hi > m_sat) {
    if (opt.scan == ScanStrategy::exhaustive) {
      double mu = 0.0;
      for (std::size_t m = m_sat + 1; m <= m_hi; ++m) {
        mu = solver.solve(m, budget, mu, opt.budget_rel_tol);
        consider(m, mu);
        if (stop_at_clamp && solver.last_clamped_low(m, mu)) break;
      }
    } else {
      // Weak duality: for any mu >= 0 and any interior count m,
      //   V(m) <= sum_{i<m} [p_i g(w_i(mu)) - mu w_i(mu)] + mu * N.
      // Counts whose tightest bound is below the incumbent cannot win.
      const std::size_t lo = m_sat + 1;
      const std::size_t span_n = m_hi - lo + 1;
      std::vector<double> bound(span_n, std::numeric_limits<double>::infinity());
      std::vector<char> done(span_n, 0);
      std::size_t limit = m_hi;  // counts above this are dominated
      const auto& runs = dist.runs();
      auto tighten = [&](double mu) {
        double acc = mu * budget;
        std::size_t r = 0;
        double term = solver.dual_term(0, mu);
        for (std::size_t m = 1; m <= limit; ++m) {
          while (runs[r].begin + runs[r].count < m) term = solver.dual_term(++r, mu);
          acc += term;
          if (m >= lo) bound[m - lo] = std::min(bound[m - lo], acc);
        }
      };
      auto evaluate = [&](std::size_t m, double guess) {
        const double mu = solver.solve(m, budget, guess, opt.budget_rel_tol);
        done[m - lo] = 1;
        consider(m, mu);
        if (stop_at_clamp && solver.last_clamped_low(m, mu)) limit = std::min(limit, m);
        tighten(mu);
        return mu;
      };

      // Seed with the count suggested by the relaxed problem in which each task
      // is funded only when its Lagrangian term is positive.
      const double mu_top = dist[0] * model.efficiency(model.w_lo());
      auto relaxed_count = [&](double mu) {
        std::size_t cnt = 0;
        for (std::size_t r = 0; r < runs.size(); ++r) {
          if (solver.dual_term(r, mu) <= 0.0) break;
          cnt += runs[r].count;
        }
        return cnt;
      };
      auto relaxed_budget = [&](double mu) {
        double total = 0.0;
        for (std::size_t r = 0; r < runs.size(); ++r) {
          if (solver.dual_term(r, mu) <= 0.0) break;
          total += static_cast<double>(runs[r].count) * solver.share(r, mu);
        }
        return total - budget;
      };
      double mu_seed = 0.0;
      if (relaxed_budget(0.0) > 0.0 && relaxed_budget(mu_top) < 0.0) {
        // Not continuous (tasks drop out), but bisection still lands on the jump.
        double a = 0.0, b = mu_top;
        for (int i = 0; i < 60; ++i) {
          const double mid = 0.5 * (a + b);
          if (relaxed_budget(mid) > 0.0)
            a = mid;
          else
            b = mid;
        }
        mu_seed = a;
      }
      const std::size_t seed_m = std::clamp(relaxed_count(mu_seed), lo, m_hi);
      double mu_last = evaluate(seed_m, mu_seed);

      for (;;) {
        std::size_t pick = 0;
        double pick_bound = -std::numeric_limits<double>::infinity();
        for (std::size_t m = lo; m <= limit; ++m) {
          if (done[m - lo]) continue;
          if (bound[m - lo] > pick_bound) {
            pick_bound = bound[m - lo];
            pick = m;
          }
        }
        if (pick == 0 || pick_bound < best_r - 1e-12 * std::fabs(best_r)) break;
        mu_last = evaluate(pick, mu_last);
      }
    }
  }

  Allocation out;
  out.w.assign(n, 0.0);
  if (best_m == 0) return out;
  out.m_star = best_m;
  if (best_m <= m_sat) {
    std::fill_n(out.w.begin(), best_m, model.w_max());
    out.lambda = 0.0;
  } else {
    auto s = solver.shares(best_m, best_mu);
    std::copy(s.begin(), s.end(), out.w.begin());
    out.lambda = -best_mu;
  }
  out.expected_throughput = expected_throughput(dist, out.w, model);
  return out;
}

/// Uniform chunks w_const = max(1, N/M) over all M tasks, capped at w_max; with
/// fewer than M slots only the first floor(N) tasks run, one slot each.
template <TimeModel Model>
Allocation naive_allocation(const TaskProbabilityDistribution& dist, double budget,
                            const Model& model) {
  detail::check_inputs(dist, budget, "naive_allocation");
  const std::size_t n = dist.size();
  Allocation out;
  out.w.assign(n, 0.0);
  if (budget >= static_cast<double>(n)) {
    const double w = std::min(budget / static_cast<double>(n), model.w_max());
    std::fill(out.w.begin(), out.w.end(), w);
    out.m_star = n;
  } else {
    const auto k = static_cast<std::size_t>(std::floor(budget));
    std::fill_n(out.w.begin(), k, 1.0);
    out.m_star = k;
  }
  out.expected_throughput = expected_throughput(dist, out.w, model);
  return out;
}

/// Best allocation that gives one constant share w to the top floor(N/w) tasks.
/// For a fixed task count k the best such w is the largest one, N/k (or w_max),
/// so the search runs over those breakpoints exactly.
template <TimeModel Model>
ConstantAllocation best_constant_allocation(const TaskProbabilityDistribution& dist,
                                            double budget, const Model& model) {
  detail::check_inputs(dist, budget, "best_constant_allocation");
  const std::size_t n = dist.size();
  ConstantAllocation best;
  auto consider = [&](double w, std::size_t k) {
    if (k == 0) return;
    const double r = dist.prefix_sum(k) / model.time(w);
    if (r > best.throughput) best = {w, k, r};
  };
  consider(model.w_max(), detail::saturated_count(n, budget, model.w_max()));
  const std::size_t k_hi = detail::feasible_count(n, budget, model.w_lo());
  for (std::size_t k = 1; k <= k_hi; ++k) {
    const double w = budget / static_cast<double>(k);
    if (w > model.w_max()) continue;
    consider(std::max(w, model.w_lo()), k);
  }
  return best;
}

/// Optimal over naive expected throughput.
template <TimeModel Model>
double boost(const TaskProbabilityDistribution& dist, double budget, const Model& model,
             const AllocatorOptions& opt = {}) {
  const double naive = naive_allocation(dist, budget, model).expected_throughput;
  if (!(naive > 0.0)) throw allocation_error("boost: naive allocation funds no task");
  return optimal_allocation(dist, budget, model, opt).expected_throughput / naive;
}

/// Largest-remainder rounding of funded shares to whole slots. Every funded task
/// keeps at least one slot; the total is floor(sum of shares).
inline std::vector<long> integerize(const Allocation& alloc) {
  std::vector<long> out(alloc.w.size(), 0);
  const auto total = static_cast<long>(std::floor(alloc.total() + 1e-9));
  std::vector<std::pair<double, std::size_t>> rem;
  long used = 0;
  for (std::size_t i = 0; i < alloc.w.size(); ++i) {
    if (alloc.w[i] <= 0.0) continue;
    const double fl = std::floor(alloc.w[i]);
    out[i] = std::max(1L, static_cast<long>(fl));
    used += out[i];
    rem.emplace_back(alloc.w[i] - fl, i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t k = 0; used < total && k < rem.size(); ++k) {
    ++out[rem[k].second];
    ++used;
  }
  return out;
}

}  // namespace specalloc
