#pragma once

// Adaptive Simpson quadrature and bracketed bisection.

#include <cmath>
#include <cstddef>
#include <optional>

namespace fragsim::numerics {

namespace detail {

template <class F>
double simpson_step(const F& f, double a, double fa, double b, double fb,
                    double m, double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  return simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// Integral of `f` over [a, b] to absolute tolerance `tol`.
///
/// The interval is first cut into `pieces` panels so that integrands with a
/// steep region near one endpoint are not mistaken for smooth ones by the
/// first Richardson test.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol = 1e-10,
                        int max_depth = 50, int pieces = 16) {
  if (!(b > a)) return 0.0;
  double total = 0.0;
  const double width = (b - a) / pieces;
  const double panel_tol = tol / pieces;
  for (int k = 0; k < pieces; ++k) {
    const double lo = a + k * width;
    const double hi = (k + 1 == pieces) ? b : lo + width;
    const double mid = 0.5 * (lo + hi);
    const double flo = f(lo);
    const double fhi = f(hi);
    const double fmid = f(mid);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    total += detail::simpson_step(f, lo, flo, hi, fhi, mid, fmid, whole,
                                  panel_tol, max_depth);
  }
  return total;
}

struct BisectionResult {
  double root;
  double residual;
  std::size_t iterations;
};

/// Bisection on [lo, hi] where g(lo) and g(hi) have opposite signs. Stops
/// when |g(mid)| <= ftol and the bracket is narrower than xtol, or when the
/// bracket cannot shrink any further in floating point.
template <class G>
BisectionResult bisect(const G& g, double lo, double hi, double ftol,
                       double xtol = 1e-15, std::size_t max_iter = 400) {
  double glo = g(lo);
  const bool lo_negative = glo < 0.0;
  double mid = 0.5 * (lo + hi);
  double gmid = g(mid);
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    gmid = g(mid);
    if (gmid == 0.0) break;
    if ((gmid < 0.0) == lo_negative) {
      lo = mid;
      glo = gmid;
    } else {
      hi = mid;
    }
    if (std::fabs(gmid) <= ftol && (hi - lo) <= xtol * (1.0 + std::fabs(mid)))
      break;
  }
  return {mid, gmid, it};
}

}  // namespace fragsim::numerics
