#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "fragsim/analytics.hpp"

using namespace fragsim;
using Catch::Approx;

TEST_CASE("uniform binary closed forms") {
  const PhiEvaluator ev(DislocationModel::uniform_binary());
  CHECK(ev.mode() == PhiMode::ClosedForm);
  CHECK(std::fabs(ev.phi(1.0) - 1.0 / 3.0) <= 1e-12);
  CHECK(std::fabs(ev.phi(0.0)) <= 1e-12);
  const auto d = ev.phi_derivs(0.0);
  CHECK(d.first == Approx(0.5).epsilon(1e-12));
  CHECK(d.second == Approx(-0.5).epsilon(1e-12));
  CHECK(ev.p_lower() == -2.0);
  CHECK(std::fabs(ev.p_bar() - std::numbers::sqrt2) <= 1e-9);
  CHECK(std::fabs(ev.critical_gap(ev.p_bar())) <= 1e-9);
  CHECK_THROWS_AS(ev.phi(-2.0), Error);
}

TEST_CASE("dyadic closed forms") {
  const PhiEvaluator ev(dyadic_model());
  CHECK(ev.phi(2.0) == Approx(0.75).epsilon(1e-14));
  CHECK(ev.phi_derivs(1.0).first == Approx(std::numbers::ln2 / 2.0).epsilon(1e-12));
  // 2^q - 1 = (q + 1) log 2, solved independently.
  double lo = 0.5, hi = 3.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::exp2(mid) - 1.0 - (mid + 1.0) * std::numbers::ln2 < 0 ? lo : hi) = mid;
  }
  CHECK(std::fabs(ev.p_bar() - lo) <= 1e-9);
  CHECK(std::isinf(ev.p_lower()));
}

TEST_CASE("derivatives agree with finite differences of phi") {
  for (const auto& model : {DislocationModel::uniform_binary(), dyadic_model(),
                            truncate_family("uniform_binary", {}, 0.05)}) {
    const PhiEvaluator ev(model);
    for (double q : {-0.5, 0.0, 0.7, 1.5, 3.0}) {
      const double h = 1e-4;
      const double fd1 = (ev.phi(q + h) - ev.phi(q - h)) / (2 * h);
      const double fd2 = (ev.phi(q + h) - 2 * ev.phi(q) + ev.phi(q - h)) / (h * h);
      const auto d = ev.phi_derivs(q);
      CHECK(std::fabs(d.first - fd1) <= std::max(1e-6, 1e-4 * std::fabs(d.first)));
      CHECK(std::fabs(d.second - fd2) <= 1e-4);
    }
  }
}

TEST_CASE("phi is increasing and concave, phi/(q+1) peaks at p_bar") {
  const PhiEvaluator ev(DislocationModel::uniform_binary());
  const double pb = ev.p_bar();
  double prev = -1e300;
  for (int i = 0; i < 100; ++i) {
    const double q = -1.9 + (pb + 5 + 1.9) * i / 99.0;
    CHECK(ev.phi_derivs(q).first > 0);
    CHECK(ev.phi_derivs(q).second <= 0);
    CHECK(ev.phi(q) > prev);
    prev = ev.phi(q);
  }
  auto ratio = [&](double q) { return ev.phi(q) / (q + 1.0); };
  for (int i = 0; i + 1 < 100; ++i) {
    const double a = -0.9 + (pb + 0.9) * i / 99.0;
    const double b = -0.9 + (pb + 0.9) * (i + 1) / 99.0;
    CHECK(ratio(b) >= ratio(a) - 1e-8);
    const double c = pb + 5.0 * i / 99.0;
    const double e = pb + 5.0 * (i + 1) / 99.0;
    CHECK(ratio(e) <= ratio(c) + 1e-8);
  }
}

TEST_CASE("quadrature matches closed form on truncated uniform binary") {
  const auto m = truncate_family("uniform_binary", {{"rate", 1.5}}, 0.05);
  const PhiEvaluator closed(m, PhiMode::ClosedForm);
  const PhiEvaluator quad(m, PhiMode::Quadrature);
  for (double q : {-0.5, 0.0, 1.0, 2.5}) {
    CHECK(std::fabs(closed.phi(q) - quad.phi(q)) <= 1e-9);
    CHECK(std::fabs(closed.phi_derivs(q).first - quad.phi_derivs(q).first) <= 1e-9);
    CHECK(std::fabs(closed.phi_derivs(q).second - quad.phi_derivs(q).second) <= 1e-8);
  }
  CHECK(std::fabs(closed.p_bar() - quad.p_bar()) <= 1e-8);
}

TEST_CASE("monte carlo mode brackets the quadrature value") {
  const auto m = truncate_family("binary_power", {{"c", 1.0}, {"alpha", 0.5}}, 0.02);
  const PhiEvaluator quad(m, PhiMode::Quadrature);
  const PhiEvaluator mc(m, PhiMode::MonteCarlo, 200000, 11);
  for (double q : {0.5, 1.0, 2.0})
    CHECK(std::fabs(mc.phi(q) - quad.phi(q)) <= 4.0 * mc.phi_stderr(q));
  CHECK(mc.p_bar_halfwidth() > 0.0);
  CHECK(std::fabs(mc.p_bar() - quad.p_bar()) <= 2.0 * mc.p_bar_halfwidth());
  CHECK_THROWS_AS(PhiEvaluator(m, PhiMode::ClosedForm), Error);
}

TEST_CASE("monte carlo mode refuses an ambiguous bracket") {
  const auto m = truncate_family("binary_power", {{"c", 1.0}, {"alpha", 0.5}}, 0.02);
  const PhiEvaluator mc(m, PhiMode::MonteCarlo, 5, 3);
  try {
    mc.p_bar();
    SUCCEED("five draws happened to be decisive");
  } catch (const Error& e) {
    CHECK((e.code() == ErrorCode::AmbiguousBracket || e.code() == ErrorCode::BracketNotFound));
  }
}

TEST_CASE("mean intensity and presence asymptote") {
  const PhiEvaluator ev(DislocationModel::uniform_binary());
  CHECK(mean_intensity(ev, 2.0, 3.0) == Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(mean_intensity(ev, 1.0, 5.0) == Approx(1.0).epsilon(1e-14));
  CHECK(presence_exponent(ev, 0.5) == Approx(0.28).epsilon(1e-12));
  const double c = v_asymptote_constant(ev, 0.5, -0.1, 0.1);
  CHECK(c == Approx(0.1582878074467).epsilon(1e-10));
  CHECK(v_asymptote(ev, 0.5, 4.0, -0.1, 0.1) == Approx(c * std::exp(1.12) / 2.0).epsilon(1e-12));
  CHECK(v_asymptote(ev, 0.5, 4.0, 0.1, 0.1) == 0.0);
}

TEST_CASE("geometric detection") {
  CHECK(detect_geometric(dyadic_model()).r == 2);
  CHECK(detect_geometric(DislocationModel::atomic({{{0.25, 0.25, 0.25, 0.25}, 1.0}})).r == 2);
  CHECK(detect_geometric(DislocationModel::atomic(
                             {{{1.0 / 3, 1.0 / 3, 1.0 / 3}, 1.0},
                              {{1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9, 1.0 / 9}, 2.0}}))
            .r == 3);
  CHECK_FALSE(detect_geometric(DislocationModel::atomic({{{0.9, 0.1}, 1.0}})).r);
  const auto ub = detect_geometric(DislocationModel::uniform_binary());
  CHECK_FALSE(ub.r);
  CHECK(ub.sampled_evidence);
}
