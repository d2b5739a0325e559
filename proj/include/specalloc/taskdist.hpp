#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "allocator.hpp"

namespace specalloc {

enum class DistributionKind { delta_mixture, beta };

/// Recipe for a synthetic task-probability list: i.i.d. draws until the running
/// sum first reaches `target_sum`.
struct DistributionSpec {
  DistributionKind kind = DistributionKind::delta_mixture;
  // delta mixture: value p_a with weight weight_high, p_b with weight weight_low
  double p_a = 1.0;
  double p_b = 1.0;
  double weight_low = 9.0;
  double weight_high = 1.0;
  // beta
  double alpha = 1.0;
  double beta = 1.0;

  double target_sum = 1000.0;
  std::uint64_t seed = 0;

  static DistributionSpec delta(double p_b, std::uint64_t seed = 0) {
    DistributionSpec s;
    s.kind = DistributionKind::delta_mixture;
    s.p_b = p_b;
    s.seed = seed;
    return s;
  }
  static DistributionSpec beta_shape(double alpha, double beta, std::uint64_t seed = 0) {
    DistributionSpec s;
    s.kind = DistributionKind::beta;
    s.alpha = alpha;
    s.beta = beta;
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (!(target_sum > 0.0)) throw std::invalid_argument("DistributionSpec: target_sum must be > 0");
    if (kind == DistributionKind::delta_mixture) {
      if (!(p_b > 0.0 && p_b <= 1.0)) throw std::invalid_argument("DistributionSpec: need 0 < p_b <= 1");
      if (!(p_a > 0.0 && p_a <= 1.0)) throw std::invalid_argument("DistributionSpec: need 0 < p_a <= 1");
      if (!(weight_low >= 0.0 && weight_high >= 0.0 && weight_low + weight_high > 0.0))
        throw std::invalid_argument("DistributionSpec: mixture weights must be non-negative");
    } else {
      if (!(alpha > 0.0 && beta > 0.0))
        throw std::invalid_argument("DistributionSpec: beta shapes must be positive");
    }
  }
};

/// Beta shape pairs used for the synthetic sweeps.
struct BetaPreset {
  double alpha;
  double beta;
};
inline const std::vector<BetaPreset>& beta_presets() {
  static const std::vector<BetaPreset> presets{
      {0.1, 1.0}, {0.5, 1.0}, {1.0, 1.0}, {0.5, 0.5}, {1.0, 3.0}, {2.0, 5.0}};
  return presets;
}

/// Speculative-task probabilities from the delta mixtures of the step sweeps.
inline const std::vector<double>& step_presets() {
  static const std::vector<double> p_b{0.5, 0.1, 0.01, 1e-10};
  return p_b;
}

namespace detail {

// Beta(a, b) draw computed in log space: for small shapes the gamma variates
// underflow long before their ratio does. Gamma(s) for s < 1 uses
// Gamma(s) = Gamma(s + 1) * U^(1/s).
template <typename Rng>
double log_gamma_variate(double shape, Rng& rng) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> g(shape, 1.0);
    double x;
    do x = g(rng); while (!(x > 0.0));
    return std::log(x);
  }
  std::gamma_distribution<double> g(shape + 1.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x, v;
  do x = g(rng); while (!(x > 0.0));
  do v = u(rng); while (!(v > 0.0));
  return std::log(x) + std::log(v) / shape;
}

template <typename Rng>
double beta_variate(double a, double b, Rng& rng) {
  constexpr double kFloor = 1e-300;
  for (;;) {
    const double la = log_gamma_variate(a, rng);
    const double lb = log_gamma_variate(b, rng);
    const double m = std::max(la, lb);
    const double lx = la - (m + std::log(std::exp(la - m) + std::exp(lb - m)));
    const double x = std::exp(lx);
    if (x >= kFloor && x <= 1.0) return x;
  }
}

}  // namespace detail

/// Draws until the running sum first reaches target_sum (the overshooting draw
/// is kept), then sorts descending.
inline TaskProbabilityDistribution sample_distribution(const DistributionSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<double> p;
  double sum = 0.0;
  if (spec.kind == DistributionKind::delta_mixture) {
    std::bernoulli_distribution high(spec.weight_high / (spec.weight_high + spec.weight_low));
    while (sum < spec.target_sum) {
      const double x = high(rng) ? spec.p_a : spec.p_b;
      p.push_back(x);
      sum += x;
    }
  } else {
    while (sum < spec.target_sum) {
      const double x = detail::beta_variate(spec.alpha, spec.beta, rng);
      p.push_back(x);
      sum += x;
    }
  }
  return TaskProbabilityDistribution::from_unsorted(std::move(p));
}

}  // namespace specalloc
