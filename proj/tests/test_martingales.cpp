#include <catch_amalgamated.hpp>

#include <cmath>

#include "fragsim/martingales.hpp"

using namespace fragsim;
using Catch::Approx;

namespace {

const DislocationModel kUb = DislocationModel::uniform_binary();

std::vector<PopulationSnapshot> run(double t_end, std::uint64_t seed, std::optional<double> slope,
                                    double eps = 1e-6) {
  SimulationOptions o;
  o.t_end = t_end;
  o.snapshot_times = {t_end};
  o.seed = seed;
  o.epsilon_freeze = eps;
  o.barrier_slope = slope;
  return simulate(kUb, o);
}

}  // namespace

TEST_CASE("values at time zero") {
  const PhiEvaluator ev(kUb);
  const double slope = ev.phi_derivs(ev.p_bar()).first;
  const auto s = run(0.0, 1, slope)[0];
  CHECK(additive(s, ev, 0.5) == Approx(1.0).epsilon(1e-14));
  CHECK(additive(s, ev, 3.0) == Approx(1.0).epsilon(1e-14));
  CHECK(derivative(s, ev) == Approx(0.0).margin(1e-14));
  CHECK(truncated_Ma(s, ev, 1.0) == Approx(1.0).epsilon(1e-14));
  CHECK(truncated_Ma(s, ev, 2.5) == Approx(2.5).epsilon(1e-14));
}

TEST_CASE("additive martingale at p = 0 is the live mass") {
  const PhiEvaluator ev(kUb);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = run(4.0, seed, std::nullopt, 1e-3)[0];
    CHECK(std::fabs(additive(s, ev, 0.0) - (1.0 - s.frozen_mass)) <= 1e-12);
  }
}

TEST_CASE("power sums decrease in p") {
  const PhiEvaluator ev(kUb);
  const auto s = run(3.0, 9, std::nullopt)[0];
  double prev = std::numeric_limits<double>::infinity();
  for (double p = -1.5; p <= 4.0; p += 0.25) {
    const double v = empirical_moment(s, p + 1.0);
    CHECK(v <= prev * (1 + 1e-12));
    prev = v;
  }
}

TEST_CASE("truncated martingale needs barrier instrumentation") {
  const PhiEvaluator ev(kUb);
  const auto plain = run(1.0, 1, std::nullopt)[0];
  const auto wrong = run(1.0, 1, 0.123)[0];
  for (const auto* s : {&plain, &wrong}) {
    try {
      truncated_Ma(*s, ev, 1.0);
      FAIL("expected BarrierFlagsMissing");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BarrierFlagsMissing);
    }
  }
  const auto ok = run(1.0, 1, ev.phi_derivs(ev.p_bar()).first)[0];
  CHECK_THROWS_AS(truncated_Ma(ok, ev, 0.0), Error);
}

TEST_CASE("truncated martingale is dominated when every weight is below one") {
  const PhiEvaluator ev(kUb);
  const double pb = ev.p_bar();
  const double slope = ev.phi_derivs(pb).first;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto s = run(8.0, seed, slope, 1e-5)[0];
    if (max_weight(s, ev) >= 1.0) continue;
    ++checked;
    for (double a : {0.5, 1.0, 3.0}) {
      const double lhs = truncated_Ma(s, ev, a);
      const double rhs = -derivative(s, ev) + a * additive(s, ev, pb);
      CHECK(lhs <= rhs + 1e-9 * std::max(1.0, std::fabs(rhs)));
      CHECK(lhs >= 0.0);
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("derivative is the p-derivative of the additive martingale") {
  const PhiEvaluator ev(kUb);
  const auto s = run(3.0, 4, std::nullopt)[0];
  const double pb = ev.p_bar();
  const double h = 1e-5;
  const double fd = (additive(s, ev, pb + h) - additive(s, ev, pb - h)) / (2 * h);
  CHECK(derivative(s, ev) == Approx(fd).epsilon(1e-5));
  CHECK(derivative_sensitivity(s, ev) >= 0.0);
}

TEST_CASE("mc_mean") {
  const PhiEvaluator ev(kUb);
  SECTION("a constant estimator has zero error") {
    const auto pt = mc_mean([](const PopulationSnapshot&) { return 1.0; }, kUb, 1.0, 10, 5);
    CHECK(pt.mean == 1.0);
    CHECK(pt.stderr_ == 0.0);
  }
  SECTION("needs two replicas") {
    CHECK_THROWS_AS(mc_mean([](const PopulationSnapshot&) { return 1.0; }, kUb, 1.0, 1, 5), Error);
  }
  SECTION("thread count does not change results") {
    auto est = [&](const PopulationSnapshot& s) { return additive(s, ev, 0.5); };
    ReplicaOptions opt;
    opt.t_grid = {1.0, 2.0};
    opt.replicas = 40;
    opt.seed = 17;
    const auto one = mc_mean(est, kUb, opt);
    opt.threads = 4;
    const auto four = mc_mean(est, kUb, opt);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(one[j].mean == four[j].mean);
      CHECK(one[j].stderr_ == four[j].stderr_);
    }
  }
  SECTION("additive mean is one") {
    ReplicaOptions opt;
    opt.t_grid = {1.0, 2.0};
    opt.replicas = 2000;
    opt.seed = 23;
    const auto pts = mc_mean([&](const PopulationSnapshot& s) { return additive(s, ev, 0.5); }, kUb, opt);
    for (const auto& pt : pts) CHECK(std::fabs(pt.mean - 1.0) <= 4 * pt.stderr_);
  }
  SECTION("truncated mean is a") {
    ReplicaOptions opt;
    opt.t_grid = {2.0};
    opt.replicas = 2000;
    opt.seed = 29;
    opt.barrier_slope = ev.phi_derivs(ev.p_bar()).first;
    const auto pt = mc_mean([&](const PopulationSnapshot& s) { return truncated_Ma(s, ev, 1.0); }, kUb, opt);
    CHECK(std::fabs(pt.front().mean - 1.0) <= 4 * pt.front().stderr_);
  }
}

TEST_CASE("below p_lower is refused") {
  const PhiEvaluator ev(kUb);
  const auto s = run(1.0, 1, std::nullopt)[0];
  try {
    additive(s, ev, -2.5);
    FAIL("expected BelowPLower");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BelowPLower);
  }
}
