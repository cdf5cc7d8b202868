#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "fragsim/ldp.hpp"

using namespace fragsim;
using Catch::Approx;

namespace {

const DislocationModel kUb = DislocationModel::uniform_binary();

bool has(const std::vector<Warning>& ws, WarningCode c) {
  return std::any_of(ws.begin(), ws.end(), [&](const Warning& w) { return w.code == c; });
}

LdpOptions options(std::size_t replicas, std::uint64_t seed) {
  LdpOptions o;
  o.replicas = replicas;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("presence at time zero") {
  const PhiEvaluator ev(kUb);
  const PresenceQuery q{0.5, -0.5, 0.5, {}};
  const auto v = estimate_V_direct(kUb, ev, q, 0.0, options(10, 1));
  CHECK(v.mean == 1.0);
  CHECK(v.stderr_ == 0.0);
  CHECK(estimate_U_direct(kUb, ev, q, 0.0, options(10, 1)).mean == 1.0);
  CHECK(estimate_V_manyto1(kUb, ev, q, 0.0, options(10, 1)).mean == 1.0);
}

TEST_CASE("many-to-one matches the exact uniform binary value") {
  // Jumps are Exp(2), so V has a Gamma-series closed form; value precomputed.
  const PhiEvaluator ev(kUb);
  const PresenceQuery q{0.5, -0.1, 0.1, {}};
  const auto v = estimate_V_manyto1(kUb, ev, q, 4.0, options(200000, 3));
  CHECK(std::fabs(v.mean - 0.2268054324330954) <= 4 * v.stderr_);
  CHECK(v.stderr_ < 0.01);
}

TEST_CASE("dyadic many-to-one matches the Poisson law") {
  // xi(t) = N(t) log 2 with N Poisson(t); V = sum over lattice points in the window.
  const PhiEvaluator ev(dyadic_model());
  const double t = 2.0;
  const PresenceQuery q{0.5, -0.5, 0.5, {}};
  const double x = presence_x(ev, q, t);
  double exact = 0.0, fact = 1.0;
  for (int k = 0; k < 60; ++k) {
    if (k > 0) fact *= k;
    const double xi = k * std::numbers::ln2;
    if (-xi >= x - 0.5 && -xi <= x + 0.5) exact += std::exp(xi) * std::exp(-t) * std::pow(t, k) / fact;
  }
  const auto v = estimate_V_manyto1(dyadic_model(), ev, q, t, options(100000, 4));
  CHECK(std::fabs(v.mean - exact) <= 4 * v.stderr_);
}

TEST_CASE("direct and many-to-one estimates agree") {
  const PhiEvaluator ev(kUb);
  const PresenceQuery q{0.5, -0.5, 0.5, {}};
  const auto est = estimate_presence(kUb, ev, q, {1.0, 2.0}, options(4000, 5));
  REQUIRE(est.size() == 2);
  for (const auto& e : est) {
    CHECK(e.V_direct.overlaps95(e.V_manyto1));
    CHECK(e.U_direct.mean <= e.V_direct.mean + 1e-12);
    CHECK(e.U_direct.mean <= 1.0);
    CHECK(e.N == 4000);
  }
}

TEST_CASE("presence counts are thread independent") {
  const PhiEvaluator ev(kUb);
  const PresenceQuery q{0.5, -0.5, 0.5, {}};
  auto o = options(50, 9);
  const auto a = presence_counts(kUb, ev, q, {1.0, 2.0}, o);
  o.threads = 3;
  const auto b = presence_counts(kUb, ev, q, {1.0, 2.0}, o);
  CHECK(a.counts == b.counts);
}

TEST_CASE("warnings") {
  const PhiEvaluator ub(kUb);
  const PhiEvaluator dy(dyadic_model());
  const std::vector<double> grid{1.0, 2.0};
  CHECK(has(presence_warnings(dy, {0.5, -0.5, 0.5, {}}, grid, 1e-6), WarningCode::GeometricModel));
  CHECK(presence_warnings(ub, {0.5, -0.5, 0.5, {}}, grid, 1e-6).empty());
  CHECK(has(presence_warnings(ub, {0.5, -0.5, 0.5, -1.0}, grid, 1e-6), WarningCode::XOverride));
  CHECK(has(presence_warnings(ub, {0.5, -0.5, 0.5, {}}, grid, 1e-6, true), WarningCode::RegimeWarning));
  CHECK_FALSE(has(presence_warnings(ub, {0.5, -0.5, 0.5, {}}, grid, 1e-6, false), WarningCode::RegimeWarning));
  CHECK(has(presence_warnings(ub, {2.0, -0.5, 0.5, {}}, grid, 1e-6, false), WarningCode::RegimeWarning));
  CHECK(has(presence_warnings(ub, {0.5, -0.5, 0.5, {}}, {100.0}, 1e-6), WarningCode::BelowFreezeThreshold));
}

TEST_CASE("ratio trace") {
  const PhiEvaluator ev(kUb);
  const PresenceQuery q{ev.p_bar() + 0.5, -0.5, 0.5, {}};
  const auto tr = ratio_trace(kUb, ev, q, {1.0, 2.0}, options(2000, 7), 200);
  REQUIRE(tr.points.size() == 2);
  for (const auto& p : tr.points) {
    CHECK(p.ratio > 0.0);
    CHECK(p.ratio <= 1.0);
    CHECK(p.ci_lo <= p.ratio);
    CHECK(p.ratio <= p.ci_hi);
  }
  CHECK(std::isfinite(tr.last_slope));
  CHECK(tr.slope_lo <= tr.slope_hi);
  CHECK_FALSE(has(tr.warnings, WarningCode::RegimeWarning));

  const auto sub = ratio_trace(kUb, ev, {0.5, -0.5, 0.5, {}}, {1.0}, options(20, 7), 10);
  CHECK(has(sub.warnings, WarningCode::RegimeWarning));
  CHECK(std::isnan(sub.last_slope));
}

TEST_CASE("step functions") {
  const StepFunction f{{-1.0, 0.0, 2.0}, {2.0, 0.5}};
  f.check();
  CHECK(f(-1.5) == 0.0);
  CHECK(f(-1.0) == 2.0);
  CHECK(f(0.0) == 0.5);
  CHECK(f(2.0) == 0.0);
  CHECK(f.exp_integral(0.0) == Approx(3.0));
  CHECK(f.exp_integral(1.0) == Approx(2.0 * (std::exp(1.0) - 1.0) + 0.5 * (1.0 - std::exp(-2.0))));
  CHECK_THROWS_AS((StepFunction{{0.0, 0.0}, {1.0}}.check()), Error);
  CHECK_THROWS_AS((StepFunction{{0.0, 1.0}, {1.0, 2.0}}.check()), Error);
}

TEST_CASE("corollary functional") {
  const PhiEvaluator ev(kUb);
  const double p = 0.5;
  const auto ind = StepFunction::indicator(-0.1, 0.1);
  CHECK(corollary_limit_factor(ev, p, ind) == Approx(v_asymptote_constant(ev, p, -0.1, 0.1)).epsilon(1e-12));

  SimulationOptions o;
  o.t_end = 3.0;
  o.snapshot_times = {3.0};
  o.seed = 2;
  const auto s = simulate(kUb, o)[0];
  const double x = -3.0 * ev.phi_derivs(p).first;
  const auto count = empirical_interval_count(s, x, -0.1, 0.0999999999);
  const double expected = std::sqrt(3.0) * std::exp(-3.0 * presence_exponent(ev, p)) * static_cast<double>(count);
  CHECK(corollary_functional(s, ev, p, StepFunction::indicator(-0.1, 0.1)) == Approx(expected).margin(1e-12));
  CHECK(corollary_functional(s, ev, p, StepFunction{{-0.1, 0.1}, {0.0}}) == 0.0);

  try {
    corollary_functional(s, ev, ev.p_bar() + 0.1, ind);
    FAIL("expected OutsideRegime");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OutsideRegime);
  }
}
