#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "fragsim/analytics.hpp"
#include "fragsim/ranked_sim.hpp"

using namespace fragsim;
using Catch::Approx;

namespace {

SimulationOptions opts(double t_end, std::uint64_t seed, double eps = 1e-6) {
  SimulationOptions o;
  o.t_end = t_end;
  o.snapshot_times = {t_end};
  o.seed = seed;
  o.epsilon_freeze = eps;
  return o;
}

}  // namespace

TEST_CASE("time zero is the unit mass") {
  const auto snaps = simulate(DislocationModel::uniform_binary(), opts(0.0, 1));
  REQUIRE(snaps.size() == 1);
  REQUIRE(snaps[0].live.size() == 1);
  CHECK(snaps[0].live[0].log_mass == 0.0);
  CHECK(snaps[0].live[0].id == kRootFragmentId);
  CHECK(snaps[0].frozen_mass == 0.0);
  CHECK(snaps[0].event_count == 0);
}

TEST_CASE("mass is conserved up to the frozen ledger") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto o = opts(5.0, seed, 1e-3);
    o.snapshot_times = {0.5, 1.0, 2.5, 5.0};
    const auto snaps = simulate(DislocationModel::uniform_binary(), o);
    double prev_frozen = 0.0;
    for (const auto& s : snaps) {
      CHECK(std::fabs(s.live_mass() + s.frozen_mass - 1.0) <= 1e-9);
      CHECK(s.frozen_mass >= prev_frozen);
      prev_frozen = s.frozen_mass;
      CHECK(std::is_sorted(s.live.begin(), s.live.end(),
                           [](const Fragment& a, const Fragment& b) { return a.log_mass > b.log_mass; }));
      for (const auto& f : s.live) CHECK(f.log_mass >= std::log(1e-3));
    }
  }
}

TEST_CASE("runs are deterministic in the seed") {
  const auto a = simulate(DislocationModel::uniform_binary(), opts(4.0, 77));
  const auto b = simulate(DislocationModel::uniform_binary(), opts(4.0, 77));
  const auto c = simulate(DislocationModel::uniform_binary(), opts(4.0, 78));
  REQUIRE(a[0].live.size() == b[0].live.size());
  for (std::size_t i = 0; i < a[0].live.size(); ++i) {
    CHECK(a[0].live[i].id == b[0].live[i].id);
    CHECK(a[0].live[i].log_mass == b[0].live[i].log_mass);
  }
  CHECK(a[0].event_count == b[0].event_count);
  bool differs = a[0].live.size() != c[0].live.size();
  for (std::size_t i = 0; !differs && i < a[0].live.size(); ++i)
    differs = a[0].live[i].log_mass != c[0].live[i].log_mass;
  CHECK(differs);
}

TEST_CASE("snapshots at intermediate times agree with separate runs") {
  auto o = opts(3.0, 5);
  o.snapshot_times = {1.0, 3.0};
  const auto both = simulate(DislocationModel::uniform_binary(), o);
  const auto early = simulate(DislocationModel::uniform_binary(), opts(1.0, 5));
  REQUIRE(both[0].live.size() == early[0].live.size());
  for (std::size_t i = 0; i < early[0].live.size(); ++i)
    CHECK(both[0].live[i].log_mass == early[0].live[i].log_mass);
}

TEST_CASE("lowering the freezing threshold only adds events") {
  const auto model = DislocationModel::uniform_binary();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::set<std::pair<double, std::uint64_t>> coarse, fine;
    simulate(model, opts(6.0, seed, 1e-2), [&](const SplitEvent& e) { coarse.insert({e.time, e.id}); });
    simulate(model, opts(6.0, seed, 1e-4), [&](const SplitEvent& e) { fine.insert({e.time, e.id}); });
    CHECK(coarse.size() <= fine.size());
    CHECK(std::includes(fine.begin(), fine.end(), coarse.begin(), coarse.end()));
  }
}

TEST_CASE("dyadic masses stay on the lattice 2^-n") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto snaps = simulate(dyadic_model(), opts(5.0, seed));
    for (const auto& f : snaps[0].live) {
      const double n = -f.log_mass / std::numbers::ln2;
      CHECK(std::fabs(n - std::round(n)) <= 1e-9);
    }
  }
}

TEST_CASE("mean of the live moment matches the closed form") {
  const auto model = DislocationModel::uniform_binary();
  const PhiEvaluator ev(model);
  const int n = 4000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const auto s = simulate(model, opts(1.0, 1000 + i, 1e-9))[0];
    const double v = empirical_moment(s, 2.0);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::fabs(mean - mean_intensity(ev, 2.0, 1.0)) <= 4 * se);
}

TEST_CASE("barrier peaks match a replay of the lineage") {
  const double slope = 0.6;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto o = opts(4.0, seed);
    o.barrier_slope = slope;
    std::map<std::uint64_t, double> death;
    std::map<std::uint64_t, std::uint64_t> parent;
    const auto snaps = simulate(dyadic_model(), o, [&](const SplitEvent& e) {
      death[e.id] = e.time;
      for (std::size_t j = 0; j < 2; ++j) parent[child_fragment_id(e.id, j)] = e.id;
    });
    for (const auto& f : snaps[0].live) {
      double depth = -f.log_mass / std::numbers::ln2;
      double peak = f.log_mass + slope * 4.0;
      for (auto id = f.id; id != kRootFragmentId;) {
        id = parent.at(id);
        depth -= 1.0;
        peak = std::max(peak, -depth * std::numbers::ln2 + slope * death.at(id));
      }
      CHECK(std::fabs(depth) <= 1e-9);
      CHECK(f.barrier_peak == Approx(std::max(peak, 0.0)).margin(1e-12));
      CHECK(f.barrier_ok(f.barrier_peak));
    }
  }
}

TEST_CASE("no barrier instrumentation leaves peaks NaN") {
  const auto snaps = simulate(dyadic_model(), opts(2.0, 3));
  for (const auto& f : snaps[0].live) CHECK(std::isnan(f.barrier_peak));
  CHECK_FALSE(snaps[0].barrier_slope);
}

TEST_CASE("population cap raises BudgetExceeded") {
  auto o = opts(10.0, 1);
  o.population_cap = 10;
  try {
    simulate(DislocationModel::uniform_binary(), o);
    FAIL("expected BudgetExceeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BudgetExceeded);
  }
}

TEST_CASE("option validation") {
  auto o = opts(1.0, 1);
  o.epsilon_freeze = 0.0;
  CHECK_THROWS_AS(simulate(dyadic_model(), o), Error);
  o = opts(1.0, 1);
  o.snapshot_times = {2.0};
  CHECK_THROWS_AS(simulate(dyadic_model(), o), Error);
  o.snapshot_times = {0.5, 0.2};
  CHECK_THROWS_AS(simulate(dyadic_model(), o), Error);
}

TEST_CASE("interval counts") {
  auto o = opts(0.0, 1);
  const auto s = simulate(dyadic_model(), o)[0];
  CHECK(empirical_interval_count(s, 0.0, -0.1, 0.1) == 1);
  CHECK(empirical_interval_count(s, 1.0, -0.1, 0.1) == 0);
  CHECK_THROWS_AS(empirical_interval_count(s, 0.0, 0.1, 0.1), Error);
}
