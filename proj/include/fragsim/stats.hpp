#pragma once

// Small statistics toolkit: running moments, Kolmogorov-Smirnov tests, and
// the chi-square tail.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace fragsim::stats {

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Sample mean and standard error of the mean.
inline MeanStderr mean_stderr(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n == 0) return {};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(n);
  if (n < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n))};
}

/// P(K > lambda) for the Kolmogorov distribution.
inline double kolmogorov_sf(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool passes(double level = 0.01) const noexcept { return p_value > level; }
};

inline double ks_p_value(double d, double n_eff) {
  const double rn = std::sqrt(n_eff);
  return kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d);
}

/// One-sample KS against a continuous CDF.
inline KsResult ks_one_sample(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return {d, ks_p_value(d, n)};
}

/// One-sample KS against an integer-valued law with CDF `cdf(k)`. The
/// asymptotic p-value is conservative for discrete laws.
inline KsResult ks_one_sample_discrete(std::span<const long> ks,
                                       const std::function<double(long)>& cdf) {
  std::vector<long> sorted(ks.begin(), ks.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  std::size_t i = 0;
  const long top = sorted.empty() ? 0 : sorted.back();
  for (long k = std::min(0L, sorted.empty() ? 0L : sorted.front()); k <= top; ++k) {
    while (i < sorted.size() && sorted[i] <= k) ++i;
    // Both CDFs are constant on [k, k + 1).
    d = std::max(d, std::fabs(i / n - cdf(k)));
  }
  return {d, ks_p_value(d, n)};
}

/// Two-sample KS; ties across samples are handled by stepping over equal
/// values together.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::fabs(i / na - j / nb));
  }
  return {d, ks_p_value(d, na * nb / (na + nb))};
}

/// P(chi2_dof > x)
inline double chi_square_sf(double x, double dof) {
  return boost::math::gamma_q(dof / 2.0, x / 2.0);
}

/// Pearson chi-square goodness of fit of integer counts to probabilities.
inline double chi_square_p_value(std::span<const double> observed,
                                 std::span<const double> probabilities) {
  double n = 0.0;
  for (double o : observed) n += o;
  double x2 = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double e = n * probabilities[k];
    x2 += (observed[k] - e) * (observed[k] - e) / e;
  }
  return chi_square_sf(x2, static_cast<double>(observed.size() - 1));
}

/// Sample Pearson correlation.
inline double correlation(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace fragsim::stats
