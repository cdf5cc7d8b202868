#pragma once

// The tilted law P^(p): the marked particle (spine) splits at rate
// nu(S) - Phi(p) according to nu^(p)(ds) = (sum_i s_i^(p+1)) nu(ds), the new
// marked piece is s_j with probability s_j^(p+1) / sum_i s_i^(p+1), and
// every other piece fragments as under P. Also the f_p-thinning of the
// tagged-fragment event stream, which realizes the same law from P.

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fragsim/analytics.hpp"
#include "fragsim/error.hpp"
#include "fragsim/measures.hpp"
#include "fragsim/partition_sim.hpp"
#include "fragsim/ranked_sim.hpp"
#include "fragsim/rng.hpp"

namespace fragsim {

/// Total mass of nu^(p): nu(S) - Phi(p).
inline double tilted_split_rate(const PhiEvaluator& ev, double p) {
  const double rate = ev.model().total_rate() - ev.phi(p);
  if (!(rate > 0.0))
    fail(ErrorCode::NonPositiveRate, "nu(S) - Phi(p) is not positive at p = " + std::to_string(p));
  return rate;
}

/// Draw from nu^(p) / (nu(S) - Phi(p)).
///
/// For p >= 0 this is exact rejection from nu / nu(S) with acceptance
/// probability sum_i s_i^(p+1). For p < 0 that ratio exceeds one, so the
/// draw comes from nu / nu(S) with importance weight
/// sum_i s_i^(p+1) nu(S) / (nu(S) - Phi(p)).
template <class URBG>
SplitSample sample_tilted_split(const PhiEvaluator& ev, double p, URBG& rng,
                                std::size_t* attempts = nullptr) {
  const auto& model = ev.model();
  const double rate = tilted_split_rate(ev, p);
  if (p < 0.0) {
    auto s = model.sample(rng);
    const double w = s.power_sum(p + 1.0) * model.total_rate() / rate;
    if (attempts) *attempts = 1;
    return {std::move(s), w};
  }
  std::size_t tries = 0;
  for (;;) {
    ++tries;
    auto s = model.sample(rng);
    if (uniform01(rng) < s.power_sum(p + 1.0)) {
      if (attempts) *attempts = tries;
      return {std::move(s), 1.0};
    }
    if (tries > kRejectionCap)
      fail(ErrorCode::BudgetExceeded, "tilted rejection sampler did not accept");
  }
}

/// Index j with probability s_j^(p+1) / sum_i s_i^(p+1).
template <class URBG>
std::size_t spine_child_select(const MassPartition& s, double p, URBG& rng) {
  const double total = s.power_sum(p + 1.0);
  double u = uniform01(rng) * total;
  const std::size_t last = s.size() - 1;
  for (std::size_t j = 0; j < last; ++j) {
    const double w = std::pow(s[j], p + 1.0);
    if (u < w) return j;
    u -= w;
  }
  return last;
}

/// Phi^(p)(q) = Phi(p + q) - Phi(p).
inline double esscher_exponent(const PhiEvaluator& ev, double p, double q) {
  return ev.phi(p + q) - ev.phi(p);
}

struct SpineSplit {
  double time;
  MassPartition split;
  std::size_t chosen;
  double weight;
};

struct UnmarkedRoot {
  double birth_time;
  double log_mass;
};

struct SpineRun {
  double p = 0.0;
  SubordinatorPath spine_path;  // jumps are -log(chosen mass)
  std::vector<SpineSplit> spine_split_log;
  std::vector<UnmarkedRoot> unmarked_roots;
  // Product of importance weights; 1 for p >= 0.
  double weight = 1.0;
  // Filled when the unmarked subpopulations are materialized: log masses
  // of every live fragment at t_end, the spine included.
  std::optional<std::vector<double>> population;
  double frozen_mass = 0.0;

  double spine_log_mass() const {
    double l = 0.0;
    for (double j : spine_path.jump_sizes) l -= j;
    return l;
  }
};

struct SpineOptions {
  double p = 0.0;
  double t_end = 0.0;
  double epsilon_freeze = 1e-6;
  std::uint64_t seed = 0;
  bool with_population = false;
};

inline SpineRun simulate_spine(const PhiEvaluator& ev, const SpineOptions& opt) {
  const auto& model = ev.model();
  check_finite_model(model);
  ev.require_domain(opt.p);
  const double rate = tilted_split_rate(ev, opt.p);

  SpineRun run;
  run.p = opt.p;
  Rng rng(derive_key(opt.seed, 0x5B1E));
  double t = 0.0;
  double log_mass = 0.0;
  for (;;) {
    t += exponential(rng, rate);
    if (t > opt.t_end) break;
    auto sample = sample_tilted_split(ev, opt.p, rng);
    const auto j = spine_child_select(sample.partition, opt.p, rng);
    for (std::size_t i = 0; i < sample.partition.size(); ++i) {
      if (i == j) continue;
      run.unmarked_roots.push_back({t, log_mass + std::log(sample.partition[i])});
    }
    const double jump = -std::log(sample.partition[j]);
    log_mass -= jump;
    run.spine_path.jump_times.push_back(t);
    run.spine_path.jump_sizes.push_back(jump);
    run.weight *= sample.weight;
    run.spine_split_log.push_back({t, std::move(sample.partition), j, sample.weight});
  }

  if (opt.with_population) {
    std::vector<double> population;
    double frozen = 0.0;
    if (log_mass >= std::log(opt.epsilon_freeze)) population.push_back(log_mass);
    else frozen += std::exp(log_mass);
    for (std::size_t k = 0; k < run.unmarked_roots.size(); ++k) {
      const auto& root = run.unmarked_roots[k];
      const double mass = std::exp(root.log_mass);
      if (mass < opt.epsilon_freeze) {
        frozen += mass;
        continue;
      }
      // Homogeneity: a piece of mass x evolves as x times a unit-mass run.
      SimulationOptions sub;
      sub.t_end = opt.t_end - root.birth_time;
      sub.epsilon_freeze = opt.epsilon_freeze / mass;
      sub.snapshot_times = {sub.t_end};
      sub.seed = derive_key(opt.seed, 0xC0FFEE00ULL + k);
      const auto snap = simulate(model, sub).front();
      for (const auto& f : snap.live) population.push_back(root.log_mass + f.log_mass);
      frozen += mass * snap.frozen_mass;
    }
    std::sort(population.begin(), population.end(), std::greater<>());
    run.population = std::move(population);
    run.frozen_mass = frozen;
  }
  return run;
}

/// Fiber-1 events with their thinning marks.
struct EventLog {
  std::vector<FiberEvent> events;

  std::size_t kept_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : events) n += e.kept;
    return n;
  }
};

inline EventLog fiber_event_log(const DislocationModel& model, double t_end, std::uint64_t seed) {
  return {simulate_fiber_events(model, t_end, seed)};
}

/// f_p-thinning: keep each event independently with probability
/// (mass of the tagged piece)^p. Only p > 0 maps P to P^(p); the reverse
/// map from P^(p), p < 0, is the f_(-p)-thinning and is requested by
/// passing -p.
template <class URBG>
EventLog thin_fiber(EventLog log, double p, URBG& rng) {
  if (p < 0.0)
    fail(ErrorCode::NegativePNotSupportedInThisDirection,
         "thinning with p < 0; pass -p to thin a tilted log back to P");
  for (auto& e : log.events) {
    const double keep = std::pow(e.split[e.pick], p);
    e.kept = e.kept && uniform01(rng) < keep;
  }
  return log;
}

}  // namespace fragsim
