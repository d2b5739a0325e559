#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace specalloc {

/// Raised when a bracketing 1D solve is handed an interval without a sign change.
class bracket_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RootOptions {
  double x_rel_tol = 1e-14;
  double f_abs_tol = 0.0;  // stop as soon as |f(x)| <= f_abs_tol
  int max_iter = 200;
};

// Brent-Dekker: bisection safeguarding secant and inverse-quadratic steps.
// f(lo) and f(hi) must have opposite signs (or one of them be zero).
template <typename Fn>
double brent_root(Fn&& f, double lo, double hi, double f_lo, double f_hi,
                  const RootOptions& opt = {}) {
  if (f_lo == 0.0) return lo;
  if (f_hi == 0.0) return hi;
  if ((f_lo > 0) == (f_hi > 0))
    throw bracket_error("brent_root: interval does not bracket a root");

  double a = lo, b = hi, fa = f_lo, fb = f_hi;
  double c = a, fc = fa, d = b - a, e = d;
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    if ((fb > 0) == (fc > 0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::fabs(fc) < std::fabs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol = 2.0 * std::numeric_limits<double>::epsilon() * std::fabs(b) +
                       0.5 * opt.x_rel_tol * std::fabs(b);
    const double m = 0.5 * (c - b);
    if (std::fabs(m) <= tol || fb == 0.0 || std::fabs(fb) <= opt.f_abs_tol) return b;

    if (std::fabs(e) >= tol && std::fabs(fa) > std::fabs(fb)) {
      double p, q, r;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * m * s;
        q = 1.0 - s;
      } else {
        q = fa / fc;
        r = fb / fc;
        p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0));
        q = (q - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0) q = -q;
      p = std::fabs(p);
      if (2.0 * p < std::min(3.0 * m * q - std::fabs(tol * q), std::fabs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = m;
        e = m;
      }
    } else {
      d = m;
      e = m;
    }
    a = b;
    fa = fb;
    b += (std::fabs(d) > tol) ? d : (m > 0 ? tol : -tol);
    fb = f(b);
  }
  return b;
}

template <typename Fn>
double brent_root(Fn&& f, double lo, double hi, const RootOptions& opt = {}) {
  return brent_root(f, lo, hi, f(lo), f(hi), opt);
}

// Newton iteration kept inside [lo, hi]; falls back to bisection whenever a
// step leaves the bracket or fails to halve the residual. `fdf(x)` returns
// {f(x), f'(x)}. Requires a sign change on the bracket.
template <typename Fn>
double safeguarded_newton(Fn&& fdf, double lo, double hi, double guess,
                          const RootOptions& opt = {}) {
  auto [f_lo, d_lo] = fdf(lo);
  auto [f_hi, d_hi] = fdf(hi);
  if (f_lo == 0.0) return lo;
  if (f_hi == 0.0) return hi;
  if ((f_lo > 0) == (f_hi > 0))
    throw bracket_error("safeguarded_newton: interval does not bracket a root");
  const bool increasing = f_lo < 0;

  double x = (guess > lo && guess < hi) ? guess : 0.5 * (lo + hi);
  double last_step = hi - lo;
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    auto [fx, dfx] = fdf(x);
    if (fx == 0.0 || std::fabs(fx) <= opt.f_abs_tol) return x;
    if ((fx < 0) == increasing)
      lo = x;
    else
      hi = x;

    double next = (dfx != 0.0) ? x - fx / dfx : 0.5 * (lo + hi);
    const double step = std::fabs(next - x);
    if (!(next > lo && next < hi) || step > 0.5 * last_step) {
      next = 0.5 * (lo + hi);
    }
    last_step = std::fabs(next - x);
    x = next;
    if (last_step <= opt.x_rel_tol * std::fabs(x) || hi - lo <= opt.x_rel_tol * std::fabs(x))
      return x;
  }
  return x;
}

}  // namespace specalloc
