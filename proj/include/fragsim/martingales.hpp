#pragma once

// Additive, derivative and truncated martingales evaluated on population
// snapshots, and the replica driver that averages them.
//
// All sums run over live fragments only. Frozen fragments are excluded and
// their ledgered mass is reported next to the estimate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fragsim/analytics.hpp"
#include "fragsim/error.hpp"
#include "fragsim/parallel.hpp"
#include "fragsim/ranked_sim.hpp"
#include "fragsim/rng.hpp"
#include "fragsim/stats.hpp"

namespace fragsim {

enum class MartingaleKind { Additive, Derivative, Truncated };

struct MartingaleSeries {
  MartingaleKind kind = MartingaleKind::Additive;
  double p = 0.0;
  double a = 0.0;  // Truncated only
  std::size_t replica_id = 0;
  std::vector<double> times;
  std::vector<double> values;
};

/// M(p, t) = exp(t Phi(p)) sum_i X_i(t)^(p+1)
inline double additive(const PopulationSnapshot& snap, const PhiEvaluator& ev, double p) {
  const double scale = std::exp(snap.time * ev.phi(p));
  return scale * empirical_moment(snap, p + 1.0);
}

/// sum_i (t Phi'(p) + log X_i) exp(t Phi(p)) X_i^(p+1); the martingale is the
/// case p = p_bar.
inline double derivative_at(const PopulationSnapshot& snap, const PhiEvaluator& ev, double p) {
  const double t = snap.time;
  const double drift = t * ev.phi_derivs(p).first;
  const double scale_log = t * ev.phi(p);
  double total = 0.0;
  for (const auto& f : snap.live)
    total += (drift + f.log_mass) * std::exp(scale_log + (p + 1.0) * f.log_mass);
  return total;
}

/// Derivative martingale M'(t) at p_bar.
inline double derivative(const PopulationSnapshot& snap, const PhiEvaluator& ev) {
  return derivative_at(snap, ev, ev.p_bar());
}

/// Half the spread of M'(t) under p_bar +/- delta.
inline double derivative_sensitivity(const PopulationSnapshot& snap, const PhiEvaluator& ev,
                                     double delta = 1e-6) {
  const double pb = ev.p_bar();
  return 0.5 * std::fabs(derivative_at(snap, ev, pb + delta) - derivative_at(snap, ev, pb - delta));
}

inline void require_barrier(const PopulationSnapshot& snap, const PhiEvaluator& ev) {
  if (!snap.barrier_slope)
    fail(ErrorCode::BarrierFlagsMissing, "run was not instrumented with barrier tracking");
  const double slope = ev.phi_derivs(ev.p_bar()).first;
  if (std::fabs(*snap.barrier_slope - slope) > 1e-9 * std::max(1.0, std::fabs(slope)))
    fail(ErrorCode::BarrierFlagsMissing, "barrier slope of the run is not Phi'(p_bar)");
}

/// M_a(t) = sum over fragments whose lineage stayed below a - s Phi'(p_bar)
/// of (-log X_i - t Phi'(p_bar) + a) exp(t Phi(p_bar)) X_i^(p_bar + 1).
inline double truncated_Ma(const PopulationSnapshot& snap, const PhiEvaluator& ev, double a) {
  if (!(a > 0.0)) fail(ErrorCode::InvalidArgument, "a must be positive");
  require_barrier(snap, ev);
  const double pb = ev.p_bar();
  const double t = snap.time;
  const double drift = t * ev.phi_derivs(pb).first;
  const double scale_log = t * ev.phi(pb);
  double total = 0.0;
  for (const auto& f : snap.live) {
    if (!f.barrier_ok(a)) continue;
    total += (-f.log_mass - drift + a) * std::exp(scale_log + (pb + 1.0) * f.log_mass);
  }
  return total;
}

/// max_i exp(t Phi(p_bar)) X_i(t)^(p_bar + 1)
inline double max_weight(const PopulationSnapshot& snap, const PhiEvaluator& ev) {
  if (snap.live.empty()) return 0.0;
  const double pb = ev.p_bar();
  return std::exp(snap.time * ev.phi(pb) + (pb + 1.0) * snap.live.front().log_mass);
}

struct ReplicaOptions {
  std::vector<double> t_grid;
  std::size_t replicas = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double epsilon_freeze = 1e-6;
  std::optional<double> barrier_slope;
  std::size_t population_cap = 10'000'000;
};

/// Runs `replicas` independent simulations with seeds replica_seed(seed, i)
/// and returns fn(i, snapshots) in replica order.
template <class Fn>
auto replicate(const DislocationModel& model, const ReplicaOptions& opt, Fn&& fn) {
  if (opt.t_grid.empty()) fail(ErrorCode::InvalidArgument, "empty time grid");
  SimulationOptions base;
  base.t_end = *std::max_element(opt.t_grid.begin(), opt.t_grid.end());
  base.epsilon_freeze = opt.epsilon_freeze;
  base.snapshot_times = opt.t_grid;
  base.barrier_slope = opt.barrier_slope;
  base.population_cap = opt.population_cap;
  return parallel_replicas(opt.replicas, opt.threads, [&](std::size_t i) {
    SimulationOptions o = base;
    o.seed = replica_seed(opt.seed, i);
    return fn(i, simulate(model, o));
  });
}

struct McPoint {
  double t = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  double frozen_mass_mean = 0.0;
};

/// Replica mean and standard error of estimator(snapshot) at every t in the
/// grid, all grid points evaluated on the same runs.
template <class Estimator>
std::vector<McPoint> mc_mean(Estimator&& estimator, const DislocationModel& model,
                             const ReplicaOptions& opt) {
  if (opt.replicas < 2) fail(ErrorCode::InvalidArgument, "mc_mean needs at least 2 replicas");
  const std::size_t k = opt.t_grid.size();
  auto per_replica = replicate(model, opt, [&](std::size_t, const std::vector<PopulationSnapshot>& snaps) {
    std::vector<double> row(2 * k);
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = estimator(snaps[j]);
      row[k + j] = snaps[j].frozen_mass;
    }
    return row;
  });
  std::vector<McPoint> out(k);
  std::vector<double> column(opt.replicas);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < opt.replicas; ++i) column[i] = per_replica[i][j];
    const auto ms = stats::mean_stderr(column);
    for (std::size_t i = 0; i < opt.replicas; ++i) column[i] = per_replica[i][k + j];
    out[j] = {opt.t_grid[j], ms.mean, ms.stderr_, stats::mean_stderr(column).mean};
  }
  return out;
}

/// Single-time convenience form.
template <class Estimator>
McPoint mc_mean(Estimator&& estimator, const DislocationModel& model, double t, std::size_t replicas,
                std::uint64_t seed, unsigned threads = 1, double epsilon_freeze = 1e-6) {
  ReplicaOptions opt;
  opt.t_grid = {t};
  opt.replicas = replicas;
  opt.seed = seed;
  opt.threads = threads;
  opt.epsilon_freeze = epsilon_freeze;
  return mc_mean(std::forward<Estimator>(estimator), model, opt).front();
}

}  // namespace fragsim
