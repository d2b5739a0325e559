#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "roots.hpp"

namespace specalloc {

/// One timing measurement: `t` seconds to finish a reference task on `w` slots.
/// Fractional `w` means oversubscribed hardware slots.
struct BenchmarkSample {
  double w;
  double t;
};

/// Coefficients of T(w) = a + b/w + d*ln(g*w) + h/w^2.
struct CostCoefficients {
  double a;
  double b;
  double d;
  double g;
  double h;
};

class fit_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Anything the allocator can price tasks with. CostModel is the stock
/// implementation; task-type specific models plug in here.
template <typename M>
concept TimeModel = requires(const M& m, double w) {
  { m.time(w) } -> std::convertible_to<double>;
  { m.efficiency(w) } -> std::convertible_to<double>;
  { m.efficiency_derivative(w) } -> std::convertible_to<double>;
  { m.invert_efficiency(w) } -> std::convertible_to<double>;
  { m.invert_efficiency(w, w) } -> std::convertible_to<double>;
  { m.w_lo() } -> std::convertible_to<double>;
  { m.w_max() } -> std::convertible_to<double>;
  { m.low_clamp_dominated() } -> std::convertible_to<bool>;
};

/// Task completion time T(w) restricted to its decreasing branch.
///
/// The domain is [w_lo, w_max]: w_max is the minimum of T, and w_lo is the
/// smallest resource count (not below a caller-supplied floor) from which the
/// marginal efficiency F(w) = -T'(w)/T(w)^2 is strictly decreasing all the way
/// up to w_max. On that domain F is invertible, which is what the Lagrangian
/// allocation needs.
class CostModel {
 public:
  static constexpr double kDefaultFloor = 0.5;
  static constexpr double kScanStep = 1e-3;  // relative

  explicit CostModel(const CostCoefficients& c, double w_floor = kDefaultFloor) : c_(c) {
    init_minimum();
    w_lo_ = monotone_lower_bound(w_floor);
    finish();
  }

  /// Builds a model with an explicit lower domain bound (e.g. read back from
  /// disk). Throws if F is not strictly decreasing on [w_lo, w_max].
  static CostModel with_domain(const CostCoefficients& c, double w_lo) {
    CostModel m(c, w_lo);
    if (std::fabs(m.w_lo_ - w_lo) > 1e-9 * std::max(1.0, w_lo))
      throw std::invalid_argument("CostModel: F is not strictly decreasing from w_lo=" +
                                  std::to_string(w_lo) + " to w_max");
    return m;
  }

  const CostCoefficients& coefficients() const { return c_; }
  double w_lo() const { return w_lo_; }
  double w_max() const { return w_max_; }
  double t_min() const { return t_min_; }
  double t_serial() const { return t_serial_; }

  /// The formula itself, on either branch.
  double raw_time(double w) const {
    return c_.a + c_.b / w + c_.d * std::log(c_.g * w) + c_.h / (w * w);
  }
  double time_derivative(double w) const {
    return -c_.b / (w * w) + c_.d / w - 2.0 * c_.h / (w * w * w);
  }
  double time_second_derivative(double w) const {
    const double w2 = w * w;
    return 2.0 * c_.b / (w2 * w) - c_.d / w2 + 6.0 * c_.h / (w2 * w2);
  }

  /// Expected seconds to finish one task on w slots. Allocations past w_max
  /// are charged t_min: the increasing branch is never used.
  double time(double w) const {
    if (!(w > 0.0)) throw std::domain_error("CostModel::time: w must be positive");
    if (w >= w_max_) return t_min_;
    return raw_time(w);
  }

  double efficiency(double w) const {
    check_domain(w, "efficiency");
    return efficiency_unchecked(w);
  }

  double efficiency_derivative(double w) const {
    check_domain(w, "efficiency_derivative");
    return efficiency_derivative_unchecked(w);
  }

  /// F^{-1}(y), clamped to [w_lo, w_max].
  double invert_efficiency(double y) const { return invert_efficiency(y, initial_guess(y)); }

  /// Same, Newton-started from `guess` (e.g. the answer for a nearby y).
  double invert_efficiency(double y, double guess) const {
    if (std::isnan(y) || y < 0.0)
      throw std::domain_error("CostModel::invert_efficiency: y must be non-negative");
    if (y >= f_lo_) return w_lo_;
    if (y <= std::max(f_max_, 0.0)) return w_max_;
    auto fdf = [&](double w) {
      return std::pair{efficiency_unchecked(w) - y, efficiency_derivative_unchecked(w)};
    };
    RootOptions opt;
    opt.x_rel_tol = 1e-14;
    return safeguarded_newton(fdf, w_lo_, w_max_, guess, opt);
  }

  /// True when a task pinned at w_lo is always worth less than the marginal
  /// resources it consumes, i.e. 1/T(w_lo) < F(w_lo) * w_lo. The allocator uses
  /// this to stop its task-count scan at the first lower-bound clamp.
  bool low_clamp_dominated() const { return 1.0 / raw_time(w_lo_) < f_lo_ * w_lo_; }

 private:
  void check_domain(double w, const char* what) const {
    const double slack = 1e-12 * w_max_;
    if (!(w >= w_lo_ - slack && w <= w_max_ + slack))
      throw std::domain_error(std::string("CostModel::") + what + ": w=" + std::to_string(w) +
                              " outside [w_lo, w_max]");
  }

  double efficiency_unchecked(double w) const {
    const double t = raw_time(w);
    return -time_derivative(w) / (t * t);
  }

  double efficiency_derivative_unchecked(double w) const {
    const double t = raw_time(w);
    const double t1 = time_derivative(w);
    return (2.0 * t1 * t1 - time_second_derivative(w) * t) / (t * t * t);
  }

  // d*w^2 - b*w - 2h = 0 is T'(w) = 0 multiplied through by w^3.
  void init_minimum() {
    if (!(c_.g > 0.0)) throw std::invalid_argument("CostModel: g must be positive");
    if (!(c_.d > 0.0))
      throw std::invalid_argument("CostModel: d <= 0, T(w) has no interior minimum");
    const double disc = c_.b * c_.b + 8.0 * c_.d * c_.h;
    if (disc < 0.0) throw std::invalid_argument("CostModel: T'(w) has no real root");
    w_max_ = (c_.b + std::sqrt(disc)) / (2.0 * c_.d);
    if (!(w_max_ > 0.0) || time_second_derivative(w_max_) <= 0.0)
      throw std::invalid_argument("CostModel: T(w) has no positive minimum");
    t_min_ = raw_time(w_max_);
    if (!(t_min_ > 0.0)) throw std::invalid_argument("CostModel: T(w_max) is not positive");
  }

  double monotone_lower_bound(double w_floor) const {
    if (!(w_floor > 0.0)) throw std::invalid_argument("CostModel: w floor must be positive");
    if (w_floor >= w_max_) throw std::invalid_argument("CostModel: w floor is above w_max");
    // Walk down from w_max in relative steps until F stops decreasing or T
    // stops being positive, then pin the crossing by bisection.
    auto good = [&](double w) {
      return efficiency_derivative_unchecked(w) < 0.0 && raw_time(w) > 0.0;
    };
    double lo = w_max_;
    double bad = 0.0;
    for (long k = 1;; ++k) {
      const double w = w_max_ * std::pow(1.0 - kScanStep, static_cast<double>(k));
      if (w < w_floor) break;
      if (!good(w)) {
        bad = w;
        break;
      }
      lo = w;
    }
    if (bad == 0.0) {
      if (good(w_floor)) return w_floor;
      bad = w_floor;
    }
    for (int i = 0; i < 200 && lo - bad > 1e-12 * lo; ++i) {
      const double mid = 0.5 * (lo + bad);
      (good(mid) ? lo : bad) = mid;
    }
    if (lo >= w_max_) throw std::invalid_argument("CostModel: empty monotone domain");
    return lo;
  }

  void finish() {
    t_serial_ = raw_time(1.0);
    f_lo_ = efficiency_unchecked(w_lo_);
    f_max_ = efficiency_unchecked(w_max_);
    // Log-spaced (w, F(w)) table used only to seed Newton in the inversion.
    constexpr int kTable = 256;
    table_w_.resize(kTable);
    table_f_.resize(kTable);
    const double lw = std::log(w_lo_), hw = std::log(w_max_);
    for (int i = 0; i < kTable; ++i) {
      table_w_[i] = std::exp(lw + (hw - lw) * i / (kTable - 1));
      table_f_[i] = efficiency_unchecked(table_w_[i]);
    }
    table_w_.front() = w_lo_;
    table_w_.back() = w_max_;
  }

  double initial_guess(double y) const {
    // table_f_ is decreasing
    auto it = std::lower_bound(table_f_.begin(), table_f_.end(), y, std::greater<>());
    if (it == table_f_.begin()) return w_lo_;
    if (it == table_f_.end()) return w_max_;
    const auto i = static_cast<std::size_t>(it - table_f_.begin());
    const double f0 = table_f_[i - 1], f1 = table_f_[i];
    const double s = (f0 == f1) ? 0.5 : (f0 - y) / (f0 - f1);
    return table_w_[i - 1] + s * (table_w_[i] - table_w_[i - 1]);
  }

  CostCoefficients c_;
  double w_lo_ = 0, w_max_ = 0, t_min_ = 0, t_serial_ = 0;
  double f_lo_ = 0, f_max_ = 0;
  std::vector<double> table_w_, table_f_;
};

static_assert(TimeModel<CostModel>);

/// LAMMPS benchmark fit on dual-socket Broadwell nodes.
inline constexpr CostCoefficients kBenchmarkCoefficients{-2.38, 481.42, 2.32, 21.76, 7.10};

inline CostModel default_cost_model() { return CostModel(kBenchmarkCoefficients); }

enum class FitWeighting {
  absolute,  // plain least squares on t
  relative,  // least squares on t relative to the measured value
};

struct FitOptions {
  // ln(g*w) = ln g + ln w, so g is not identifiable separately from a: the fit
  // determines a + d*ln g and reports it against this reference g.
  double g_ref = kBenchmarkCoefficients.g;
  double w_floor = CostModel::kDefaultFloor;
  // Timing noise is roughly proportional to t, and plain least squares lets
  // the slow single-core points swamp the flat region that locates w_max.
  FitWeighting weighting = FitWeighting::relative;
};

/// Least-squares fit of t ~ a + b/w + d*ln(g*w) + h/w^2.
inline CostModel fit_cost_model(std::span<const BenchmarkSample> samples,
                                const FitOptions& opt = {}) {
  if (samples.size() < 5) throw fit_error("fit_cost_model: need at least 5 samples");
  double w_min = samples[0].w, w_hi = samples[0].w;
  for (const auto& s : samples) {
    if (!(s.w > 0.0) || !(s.t > 0.0) || !std::isfinite(s.w) || !std::isfinite(s.t))
      throw fit_error("fit_cost_model: samples need positive finite w and t");
    w_min = std::min(w_min, s.w);
    w_hi = std::max(w_hi, s.w);
  }
  if (w_hi < 10.0 * w_min)
    throw fit_error("fit_cost_model: samples must span at least one decade in w");
  if (!(opt.g_ref > 0.0)) throw fit_error("fit_cost_model: g_ref must be positive");

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd design(n, 4);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const double scale = opt.weighting == FitWeighting::relative ? 1.0 / s.t : 1.0;
    design(i, 0) = scale;
    design(i, 1) = scale / s.w;
    design(i, 2) = scale * std::log(s.w);
    design(i, 3) = scale / (s.w * s.w);
    rhs(i) = scale * s.t;
  }
  // Column equilibration keeps the rank test meaningful across 1 .. 1/w^2.
  Eigen::VectorXd norms = design.colwise().norm();
  for (Eigen::Index j = 0; j < 4; ++j) {
    if (norms(j) == 0.0) throw fit_error("fit_cost_model: singular design matrix");
    design.col(j) /= norms(j);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-12);
  if (qr.rank() < 4) throw fit_error("fit_cost_model: singular design matrix");
  Eigen::VectorXd x = qr.solve(rhs);
  for (Eigen::Index j = 0; j < 4; ++j) x(j) /= norms(j);

  CostCoefficients c{};
  c.b = x(1);
  c.d = x(2);
  c.h = x(3);
  c.g = opt.g_ref;
  c.a = x(0) - c.d * std::log(c.g);
  if (!(c.d > 0.0))
    throw fit_error("fit_cost_model: fitted T(w) is monotone (no minimum), d=" +
                    std::to_string(c.d));
  try {
    CostModel model(c, opt.w_floor);
    if (model.w_max() < w_min || model.w_max() > w_hi)
      throw fit_error("fit_cost_model: fitted minimum w_max=" + std::to_string(model.w_max()) +
                      " lies outside the sampled range [" + std::to_string(w_min) + ", " +
                      std::to_string(w_hi) + "]");
    return model;
  } catch (const std::invalid_argument& e) {
    throw fit_error(std::string("fit_cost_model: ") + e.what());
  }
}

}  // namespace specalloc
