#pragma once

// Presence estimators on the ray x = -t Phi'(p): V(t, x) is the mean number
// of fragments with log mass in [x + alpha, x + beta], U(t, x) the
// probability that there is at least one. Also the U / V ratio trace and the
// rescaled step-function functional of the sharp large-deviation statement.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fragsim/analytics.hpp"
#include "fragsim/error.hpp"
#include "fragsim/martingales.hpp"
#include "fragsim/parallel.hpp"
#include "fragsim/partition_sim.hpp"
#include "fragsim/ranked_sim.hpp"
#include "fragsim/rng.hpp"
#include "fragsim/stats.hpp"

namespace fragsim {

enum class WarningCode { RegimeWarning, GeometricModel, XOverride, BelowFreezeThreshold };

inline constexpr std::string_view to_string(WarningCode c) noexcept {
  switch (c) {
    case WarningCode::RegimeWarning: return "RegimeWarning";
    case WarningCode::GeometricModel: return "GeometricModel";
    case WarningCode::XOverride: return "XOverride";
    case WarningCode::BelowFreezeThreshold: return "BelowFreezeThreshold";
  }
  return "Unknown";
}

struct Warning {
  WarningCode code;
  std::string message;
};

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;

  double lo95() const noexcept { return mean - 1.959963984540054 * stderr_; }
  double hi95() const noexcept { return mean + 1.959963984540054 * stderr_; }
  bool overlaps95(const Estimate& o) const noexcept {
    return lo95() <= o.hi95() && o.lo95() <= hi95();
  }
};

inline Estimate to_estimate(std::span<const double> xs) {
  const auto ms = stats::mean_stderr(xs);
  return {ms.mean, ms.stderr_};
}

struct PresenceQuery {
  double p = 0.0;
  double alpha = -0.5;
  double beta = 0.5;
  // Replaces -t Phi'(p) when set; the asymptotics are then not claimed.
  std::optional<double> x_override;
};

struct LdpOptions {
  std::size_t replicas = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double epsilon_freeze = 1e-6;
  std::size_t population_cap = 10'000'000;
};

inline double presence_x(const PhiEvaluator& ev, const PresenceQuery& q, double t) {
  if (q.x_override) return *q.x_override;
  return -t * ev.phi_derivs(q.p).first;
}

/// Warnings common to every presence computation. `need_supercritical`
/// selects the regime p > p_bar of the U / V ratio; otherwise the regime is
/// p in (p_lower, p_bar).
inline std::vector<Warning> presence_warnings(const PhiEvaluator& ev, const PresenceQuery& q,
                                              const std::vector<double>& t_grid,
                                              double epsilon_freeze,
                                              std::optional<bool> need_supercritical = {}) {
  std::vector<Warning> out;
  const auto geo = detect_geometric(ev.model());
  if (geo.r)
    out.push_back({WarningCode::GeometricModel,
                   "model is " + std::to_string(*geo.r) +
                       "-geometric; lattice effects invalidate the sqrt(t) asymptotics"});
  if (q.x_override)
    out.push_back({WarningCode::XOverride, "x is not tied to -t Phi'(p); asymptotics do not apply"});
  if (need_supercritical) {
    const double pb = ev.p_bar();
    if (*need_supercritical && !(q.p > pb))
      out.push_back({WarningCode::RegimeWarning,
                     "U/V ratio limit is only claimed for p > p_bar = " + std::to_string(pb)});
    if (!*need_supercritical && !(q.p < pb))
      out.push_back({WarningCode::RegimeWarning,
                     "p is outside (p_lower, p_bar) = (" + std::to_string(ev.p_lower()) + ", " +
                         std::to_string(pb) + ")"});
  }
  const double log_eps = std::log(epsilon_freeze);
  for (double t : t_grid) {
    if (presence_x(ev, q, t) + q.alpha < log_eps) {
      out.push_back({WarningCode::BelowFreezeThreshold,
                     "window at t = " + std::to_string(t) +
                         " reaches below log(epsilon_freeze); frozen fragments are not counted"});
      break;
    }
  }
  return out;
}

/// Interval counts of each replica at each grid time: counts[i][j] is the
/// count for replica i at t_grid[j].
struct PresenceCounts {
  std::vector<double> t_grid;
  std::vector<double> x;
  std::vector<std::vector<std::uint32_t>> counts;
  std::vector<double> frozen_mass_mean;
};

inline PresenceCounts presence_counts(const DislocationModel& model, const PhiEvaluator& ev,
                                      const PresenceQuery& q, const std::vector<double>& t_grid,
                                      const LdpOptions& opt) {
  if (!(q.alpha < q.beta)) fail(ErrorCode::InvalidArgument, "alpha must be below beta");
  check_finite_model(model);
  ev.require_domain(q.p);
  PresenceCounts pc;
  pc.t_grid = t_grid;
  for (double t : t_grid) pc.x.push_back(presence_x(ev, q, t));
  ReplicaOptions ro;
  ro.t_grid = t_grid;
  ro.replicas = opt.replicas;
  ro.seed = opt.seed;
  ro.threads = opt.threads;
  ro.epsilon_freeze = opt.epsilon_freeze;
  ro.population_cap = opt.population_cap;
  struct Row {
    std::vector<std::uint32_t> counts;
    std::vector<double> frozen;
  };
  auto rows = replicate(model, ro, [&](std::size_t, const std::vector<PopulationSnapshot>& snaps) {
    Row r;
    for (std::size_t j = 0; j < snaps.size(); ++j) {
      r.counts.push_back(static_cast<std::uint32_t>(
          empirical_interval_count(snaps[j], pc.x[j], q.alpha, q.beta)));
      r.frozen.push_back(snaps[j].frozen_mass);
    }
    return r;
  });
  pc.frozen_mass_mean.assign(t_grid.size(), 0.0);
  for (auto& r : rows) {
    for (std::size_t j = 0; j < t_grid.size(); ++j) pc.frozen_mass_mean[j] += r.frozen[j];
    pc.counts.push_back(std::move(r.counts));
  }
  for (auto& f : pc.frozen_mass_mean) f /= static_cast<double>(std::max<std::size_t>(rows.size(), 1));
  return pc;
}

inline Estimate V_from_counts(const PresenceCounts& pc, std::size_t j) {
  std::vector<double> v;
  v.reserve(pc.counts.size());
  for (const auto& row : pc.counts) v.push_back(row[j]);
  return to_estimate(v);
}

inline Estimate U_from_counts(const PresenceCounts& pc, std::size_t j) {
  std::vector<double> v;
  v.reserve(pc.counts.size());
  for (const auto& row : pc.counts) v.push_back(row[j] > 0 ? 1.0 : 0.0);
  return to_estimate(v);
}

inline Estimate estimate_V_direct(const DislocationModel& model, const PhiEvaluator& ev,
                                  const PresenceQuery& q, double t, const LdpOptions& opt) {
  return V_from_counts(presence_counts(model, ev, q, {t}, opt), 0);
}

inline Estimate estimate_U_direct(const DislocationModel& model, const PhiEvaluator& ev,
                                  const PresenceQuery& q, double t, const LdpOptions& opt) {
  return U_from_counts(presence_counts(model, ev, q, {t}, opt), 0);
}

/// V through the tagged fragment: E[e^xi(t) 1{-xi(t) in [x + alpha, x + beta]}],
/// one subordinator path per replica, every grid time read off the same path.
inline std::vector<Estimate> estimate_V_manyto1(const DislocationModel& model,
                                                const PhiEvaluator& ev, const PresenceQuery& q,
                                                const std::vector<double>& t_grid,
                                                const LdpOptions& opt) {
  if (!(q.alpha < q.beta)) fail(ErrorCode::InvalidArgument, "alpha must be below beta");
  check_finite_model(model);
  ev.require_domain(q.p);
  if (t_grid.empty()) fail(ErrorCode::InvalidArgument, "empty time grid");
  const double t_max = *std::max_element(t_grid.begin(), t_grid.end());
  std::vector<double> x;
  for (double t : t_grid) x.push_back(presence_x(ev, q, t));
  auto rows = parallel_replicas(opt.replicas, opt.threads, [&](std::size_t i) {
    const auto path = simulate_subordinator(model, t_max, replica_seed(opt.seed, i));
    std::vector<double> w(t_grid.size());
    for (std::size_t j = 0; j < t_grid.size(); ++j) {
      const double xi = path.value_at(t_grid[j]);
      const double y = -xi;
      w[j] = (y >= x[j] + q.alpha && y <= x[j] + q.beta) ? std::exp(xi) : 0.0;
    }
    return w;
  });
  std::vector<Estimate> out;
  std::vector<double> col(rows.size());
  for (std::size_t j = 0; j < t_grid.size(); ++j) {
    for (std::size_t i = 0; i < rows.size(); ++i) col[i] = rows[i][j];
    out.push_back(to_estimate(col));
  }
  return out;
}

inline Estimate estimate_V_manyto1(const DislocationModel& model, const PhiEvaluator& ev,
                                   const PresenceQuery& q, double t, const LdpOptions& opt) {
  return estimate_V_manyto1(model, ev, q, std::vector<double>{t}, opt).front();
}

struct PresenceEstimate {
  double t = 0.0;
  double x = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  Estimate V_direct;
  Estimate V_manyto1;
  Estimate U_direct;
  std::size_t N = 0;
  double epsilon_freeze = 0.0;
  double frozen_mass_mean = 0.0;
};

/// Both V estimators and U on a grid. The direct and many-to-one estimates
/// use disjoint seed streams.
inline std::vector<PresenceEstimate> estimate_presence(const DislocationModel& model,
                                                       const PhiEvaluator& ev,
                                                       const PresenceQuery& q,
                                                       const std::vector<double>& t_grid,
                                                       const LdpOptions& opt) {
  const auto pc = presence_counts(model, ev, q, t_grid, opt);
  LdpOptions mo = opt;
  mo.seed = derive_key(opt.seed, 0x3A2F);
  const auto m1 = estimate_V_manyto1(model, ev, q, t_grid, mo);
  std::vector<PresenceEstimate> out;
  for (std::size_t j = 0; j < t_grid.size(); ++j) {
    out.push_back({t_grid[j], pc.x[j], q.alpha, q.beta, V_from_counts(pc, j), m1[j],
                   U_from_counts(pc, j), opt.replicas, opt.epsilon_freeze,
                   pc.frozen_mass_mean[j]});
  }
  return out;
}

struct RatioPoint {
  double t = 0.0;
  double ratio = std::numeric_limits<double>::quiet_NaN();
  double ci_lo = std::numeric_limits<double>::quiet_NaN();
  double ci_hi = std::numeric_limits<double>::quiet_NaN();
  Estimate U;
  Estimate V;
};

struct RatioTrace {
  std::vector<RatioPoint> points;
  // Slope of the ratio over the last two grid points with a bootstrap
  // percentile interval. The stabilization test is heuristic.
  double last_slope = std::numeric_limits<double>::quiet_NaN();
  double slope_lo = std::numeric_limits<double>::quiet_NaN();
  double slope_hi = std::numeric_limits<double>::quiet_NaN();
  bool stabilized = false;
  std::vector<Warning> warnings;
};

inline double percentile(std::vector<double> v, double q) {
  std::erase_if(v, [](double x) { return !std::isfinite(x); });
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto k = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(k);
  return k + 1 < v.size() ? v[k] * (1.0 - frac) + v[k + 1] * frac : v[k];
}

/// U / V over the grid with replica-bootstrap 95% intervals. Every grid time
/// is read off the same replicas, so resampling a replica keeps the joint
/// law across t.
inline RatioTrace ratio_trace(const DislocationModel& model, const PhiEvaluator& ev,
                              const PresenceQuery& q, const std::vector<double>& t_grid,
                              const LdpOptions& opt, std::size_t bootstrap = 1000) {
  RatioTrace tr;
  tr.warnings = presence_warnings(ev, q, t_grid, opt.epsilon_freeze, true);
  const auto pc = presence_counts(model, ev, q, t_grid, opt);
  const std::size_t n = pc.counts.size();
  const std::size_t k = t_grid.size();

  auto ratio_of = [&](auto&& index_of) {
    std::vector<double> r(k);
    for (std::size_t j = 0; j < k; ++j) {
      double sv = 0.0, su = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = pc.counts[index_of(i)][j];
        sv += c;
        su += c > 0;
      }
      r[j] = sv > 0.0 ? su / sv : std::numeric_limits<double>::quiet_NaN();
    }
    return r;
  };

  const auto point = ratio_of([](std::size_t i) { return i; });
  std::vector<std::vector<double>> boot(k);
  std::vector<double> boot_slope;
  Rng rng(derive_key(opt.seed, 0xB007));
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < bootstrap && n > 0; ++b) {
    for (auto& v : idx) v = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
    const auto r = ratio_of([&](std::size_t i) { return idx[i]; });
    for (std::size_t j = 0; j < k; ++j) boot[j].push_back(r[j]);
    if (k >= 2) boot_slope.push_back((r[k - 1] - r[k - 2]) / (t_grid[k - 1] - t_grid[k - 2]));
  }

  for (std::size_t j = 0; j < k; ++j) {
    RatioPoint rp;
    rp.t = t_grid[j];
    rp.ratio = point[j];
    rp.ci_lo = percentile(boot[j], 0.025);
    rp.ci_hi = percentile(boot[j], 0.975);
    rp.U = U_from_counts(pc, j);
    rp.V = V_from_counts(pc, j);
    tr.points.push_back(rp);
  }
  if (k >= 2) {
    tr.last_slope = (point[k - 1] - point[k - 2]) / (t_grid[k - 1] - t_grid[k - 2]);
    tr.slope_lo = percentile(boot_slope, 0.025);
    tr.slope_hi = percentile(boot_slope, 0.975);
    tr.stabilized = std::isfinite(tr.last_slope) && tr.slope_lo <= 0.0 && 0.0 <= tr.slope_hi;
  }
  return tr;
}

/// Finite step function: value[k] on [breaks[k], breaks[k+1]), zero outside.
struct StepFunction {
  std::vector<double> breaks;
  std::vector<double> values;

  static StepFunction indicator(double a, double b) { return {{a, b}, {1.0}}; }

  void check() const {
    if (breaks.size() != values.size() + 1 || values.empty())
      fail(ErrorCode::InvalidArgument, "step function needs one more break than values");
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k)
      if (!(breaks[k] < breaks[k + 1]))
        fail(ErrorCode::InvalidArgument, "step function breaks must increase");
  }

  double operator()(double y) const {
    if (y < breaks.front() || y >= breaks.back()) return 0.0;
    const auto it = std::upper_bound(breaks.begin(), breaks.end(), y);
    return values[static_cast<std::size_t>(it - breaks.begin()) - 1];
  }

  /// int f(y) e^(-k y) dy
  double exp_integral(double k) const {
    double total = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double a = breaks[j], b = breaks[j + 1];
      total += values[j] * (k == 0.0 ? b - a : (std::exp(-k * a) - std::exp(-k * b)) / k);
    }
    return total;
  }
};

inline void require_subcritical(const PhiEvaluator& ev, double p) {
  ev.require_domain(p);
  if (!(p < ev.p_bar()))
    fail(ErrorCode::OutsideRegime, "p = " + std::to_string(p) + " is not below p_bar = " +
                                       std::to_string(ev.p_bar()));
}

/// sqrt(t) e^(-t((p+1)Phi'(p) - Phi(p))) sum_i f(t Phi'(p) + log X_i(t))
inline double corollary_functional(const PopulationSnapshot& snap, const PhiEvaluator& ev,
                                   double p, const StepFunction& f) {
  require_subcritical(ev, p);
  f.check();
  const double t = snap.time;
  const double shift = t * ev.phi_derivs(p).first;
  double sum = 0.0;
  for (const auto& frag : snap.live) sum += f(shift + frag.log_mass);
  if (sum == 0.0) return 0.0;
  return std::sqrt(t) * std::exp(-t * presence_exponent(ev, p)) * sum;
}

/// Almost-sure limit of the functional divided by M(p, t):
/// (2 pi |Phi''(p)|)^(-1/2) int f(y) e^(-(p+1) y) dy.
inline double corollary_limit_factor(const PhiEvaluator& ev, double p, const StepFunction& f) {
  require_subcritical(ev, p);
  f.check();
  const double s2 = std::fabs(ev.phi_derivs(p).second);
  return f.exp_integral(p + 1.0) / std::sqrt(2.0 * std::numbers::pi * s2);
}

}  // namespace fragsim
