#pragma once

// Event-driven simulation of the ranked fragmentation under a finite
// dislocation measure.
//
// Each live fragment owns a random stream keyed by (seed, fragment id). The
// stream first yields the fragment's exponential lifetime and then, at the
// ring, the split s ~ nu / nu(S). Child ids are derived from the parent id
// and the child's rank in s, so a fragment's fate depends only on its own
// lineage and not on the order in which the population is processed.
// Fragments lighter than epsilon_freeze are frozen: they leave the event set
// and their mass goes to a ledger.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <vector>

#include "fragsim/error.hpp"
#include "fragsim/measures.hpp"
#include "fragsim/rng.hpp"

namespace fragsim {

struct Fragment {
  std::uint64_t id = 0;
  double log_mass = 0.0;
  double birth_time = 0.0;
  std::optional<std::uint64_t> parent_id;
  // max over the lineage history of log_mass(s) + slope * s, evaluated up to
  // the snapshot time; NaN when the run carried no barrier instrumentation.
  double barrier_peak = std::numeric_limits<double>::quiet_NaN();
  bool frozen = false;

  /// The lineage never rose above the line a - slope * s.
  bool barrier_ok(double a) const noexcept { return barrier_peak <= a; }
};

struct PopulationSnapshot {
  double time = 0.0;
  std::vector<Fragment> live;  // sorted by decreasing log_mass
  double frozen_mass = 0.0;
  std::uint64_t event_count = 0;
  // Provenance for auditability.
  double epsilon_freeze = 0.0;
  double truncation_epsilon = 0.0;
  double total_rate = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> barrier_slope;

  double live_mass() const noexcept {
    double total = 0.0;
    for (const auto& f : live) total += std::exp(f.log_mass);
    return total;
  }
};

struct SimulationOptions {
  double t_end = 0.0;
  double epsilon_freeze = 1e-6;
  std::vector<double> snapshot_times;  // sorted, each <= t_end
  std::uint64_t seed = 0;
  std::size_t population_cap = 10'000'000;
  // When set, barrier peaks against the line a - slope * s are tracked.
  std::optional<double> barrier_slope;
};

/// One dislocation: the fragment `id` split at `time`.
struct SplitEvent {
  double time;
  std::uint64_t id;
};

using SplitObserver = std::function<void(const SplitEvent&)>;

inline constexpr std::uint64_t kRootFragmentId = 1;

inline std::uint64_t child_fragment_id(std::uint64_t parent, std::size_t rank) {
  return derive_key(parent, rank + 1);
}

namespace detail {

struct LiveNode {
  Fragment fragment;
  Rng stream;
  double ring_time;
  double peak_at_birth;  // barrier peak accumulated by ancestors
  bool alive;
};

struct Ring {
  double time;
  std::uint64_t id;
  std::size_t slot;
  bool operator>(const Ring& o) const noexcept {
    return time != o.time ? time > o.time : id > o.id;
  }
};

}  // namespace detail

inline void check_finite_model(const DislocationModel& model) {
  if (!(model.total_rate() > 0.0) || !std::isfinite(model.total_rate()))
    fail(ErrorCode::ModelNotFinite, "dislocation measure must have finite positive mass");
}

/// Runs the fragmentation from a unit mass and returns one snapshot per
/// requested time. Deterministic given (model, options).
inline std::vector<PopulationSnapshot> simulate(const DislocationModel& model,
                                                const SimulationOptions& opt,
                                                const SplitObserver& observer = {}) {
  check_finite_model(model);
  if (!(opt.epsilon_freeze > 0.0 && opt.epsilon_freeze < 1.0))
    fail(ErrorCode::InvalidArgument, "epsilon_freeze must lie in (0, 1)");
  if (!std::is_sorted(opt.snapshot_times.begin(), opt.snapshot_times.end()))
    fail(ErrorCode::InvalidArgument, "snapshot times must be sorted");
  if (!opt.snapshot_times.empty() && opt.snapshot_times.back() > opt.t_end)
    fail(ErrorCode::InvalidArgument, "snapshot time beyond t_end");
  if (!opt.snapshot_times.empty() && opt.snapshot_times.front() < 0.0)
    fail(ErrorCode::InvalidArgument, "negative snapshot time");

  const double rate = model.total_rate();
  const double log_freeze = std::log(opt.epsilon_freeze);
  const bool barrier = opt.barrier_slope.has_value();
  const double slope = barrier ? *opt.barrier_slope : 0.0;

  std::vector<detail::LiveNode> pool;
  std::vector<std::size_t> free_slots;
  std::priority_queue<detail::Ring, std::vector<detail::Ring>, std::greater<>> heap;
  std::size_t live_count = 0;
  double frozen_mass = 0.0;
  std::uint64_t events = 0;

  auto spawn = [&](Fragment f, double peak) {
    Rng stream(derive_key(opt.seed, f.id));
    const double ring = f.birth_time + exponential(stream, rate);
    std::size_t slot;
    if (!free_slots.empty()) {
      slot = free_slots.back();
      free_slots.pop_back();
    } else {
      slot = pool.size();
      pool.emplace_back();
    }
    pool[slot] = {std::move(f), stream, ring, peak, true};
    heap.push({ring, pool[slot].fragment.id, slot});
    if (++live_count > opt.population_cap)
      fail(ErrorCode::BudgetExceeded,
           "live population exceeded " + std::to_string(opt.population_cap));
  };

  Fragment root;
  root.id = kRootFragmentId;
  spawn(root, barrier ? 0.0 : std::numeric_limits<double>::quiet_NaN());

  auto take_snapshot = [&](double t) {
    PopulationSnapshot snap;
    snap.time = t;
    snap.frozen_mass = frozen_mass;
    snap.event_count = events;
    snap.epsilon_freeze = opt.epsilon_freeze;
    snap.truncation_epsilon = model.epsilon();
    snap.total_rate = rate;
    snap.seed = opt.seed;
    snap.barrier_slope = opt.barrier_slope;
    snap.live.reserve(live_count);
    for (const auto& node : pool) {
      if (!node.alive) continue;
      Fragment f = node.fragment;
      if (barrier)
        f.barrier_peak = std::max(node.peak_at_birth, f.log_mass + slope * t);
      snap.live.push_back(std::move(f));
    }
    std::sort(snap.live.begin(), snap.live.end(), [](const Fragment& a, const Fragment& b) {
      return a.log_mass != b.log_mass ? a.log_mass > b.log_mass : a.id < b.id;
    });
    return snap;
  };

  auto process_until = [&](double horizon) {
    while (!heap.empty() && heap.top().time <= horizon) {
      const auto ring = heap.top();
      heap.pop();
      auto& node = pool[ring.slot];
      const Fragment parent = node.fragment;
      const double parent_peak =
          barrier ? std::max(node.peak_at_birth, parent.log_mass + slope * ring.time)
                  : node.peak_at_birth;
      const MassPartition s = model.sample(node.stream);
      node.alive = false;
      free_slots.push_back(ring.slot);
      --live_count;
      ++events;
      if (observer) observer({ring.time, parent.id});
      for (std::size_t j = 0; j < s.size(); ++j) {
        Fragment child;
        child.id = child_fragment_id(parent.id, j);
        child.log_mass = parent.log_mass + std::log(s[j]);
        child.birth_time = ring.time;
        child.parent_id = parent.id;
        if (child.log_mass < log_freeze) {
          frozen_mass += std::exp(child.log_mass);
          continue;
        }
        spawn(std::move(child), parent_peak);
      }
    }
  };

  std::vector<PopulationSnapshot> out;
  out.reserve(opt.snapshot_times.size());
  for (double t : opt.snapshot_times) {
    process_until(t);
    out.push_back(take_snapshot(t));
  }
  return out;
}

/// sum over live fragments of mass^theta; frozen fragments are excluded and
/// their ledgered mass is available as snapshot.frozen_mass.
inline double empirical_moment(const PopulationSnapshot& snap, double theta) {
  double total = 0.0;
  for (const auto& f : snap.live) total += std::exp(theta * f.log_mass);
  return total;
}

/// Number of live fragments with log_mass in [x + alpha, x + beta].
inline std::size_t empirical_interval_count(const PopulationSnapshot& snap, double x,
                                            double alpha, double beta) {
  if (!(alpha < beta)) fail(ErrorCode::InvalidArgument, "alpha must be below beta");
  const double lo = x + alpha;
  const double hi = x + beta;
  std::size_t n = 0;
  for (const auto& f : snap.live) n += (f.log_mass >= lo && f.log_mass <= hi);
  return n;
}

}  // namespace fragsim
