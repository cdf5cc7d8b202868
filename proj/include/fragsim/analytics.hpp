#pragma once

// The Laplace exponent Phi(q) = int (1 - sum_i s_i^(q+1)) nu(ds), its first
// two derivatives, the critical exponents p_lower and p_bar, and quantities
// built from them (mean intensity, presence asymptote, geometric detection).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fragsim/error.hpp"
#include "fragsim/measures.hpp"
#include "fragsim/numerics.hpp"
#include "fragsim/rng.hpp"

namespace fragsim {

enum class PhiMode { Auto, ClosedForm, Quadrature, MonteCarlo };

inline constexpr std::string_view to_string(PhiMode mode) noexcept {
  switch (mode) {
    case PhiMode::Auto: return "auto";
    case PhiMode::ClosedForm: return "closed_form";
    case PhiMode::Quadrature: return "quadrature";
    case PhiMode::MonteCarlo: return "monte_carlo";
  }
  return "auto";
}

struct PhiDerivs {
  double first = 0.0;
  double second = 0.0;
  // Absolute error estimates; zero for closed forms.
  double first_err = 0.0;
  double second_err = 0.0;
};

struct GeometricReport {
  std::optional<int> r;
  bool sampled_evidence = false;  // true when the model is not atomic
  std::size_t draws_tested = 0;
};

inline constexpr double kQuadratureTolerance = 1e-10;
inline constexpr double kPBarTolerance = 1e-10;

class PhiEvaluator {
 public:
  explicit PhiEvaluator(DislocationModel model, PhiMode mode = PhiMode::Auto,
                        std::size_t mc_samples = 200000,
                        std::uint64_t mc_seed = 0x243F6A8885A308D3ULL)
      : model_(std::move(model)), mode_(resolve_mode(model_, mode)) {
    p_lower_ = declared_p_lower(model_);
    if (mode_ == PhiMode::MonteCarlo) {
      Rng rng(mc_seed);
      draws_.reserve(mc_samples);
      for (std::size_t i = 0; i < mc_samples; ++i) draws_.push_back(model_.sample(rng));
    }
    try {
      locate_p_bar();
    } catch (const Error& e) {
      p_bar_error_ = {e.code(), e.what()};
    }
  }

  const DislocationModel& model() const noexcept { return model_; }
  PhiMode mode() const noexcept { return mode_; }

  /// Lower convergence abscissa; -infinity when every atom or sample has its
  /// second entry bounded away from zero.
  double p_lower() const noexcept { return p_lower_; }

  double p_bar() const {
    if (!p_bar_) fail(p_bar_error_.first, p_bar_error_.second);
    return *p_bar_;
  }

  /// Half-width of a 95% interval for p_bar (nonzero only in Monte Carlo mode).
  double p_bar_halfwidth() const noexcept { return p_bar_halfwidth_; }

  void require_domain(double q) const {
    if (!(q > p_lower_))
      fail(ErrorCode::BelowPLower,
           "q = " + std::to_string(q) + " is not above p_lower = " +
               std::to_string(p_lower_));
  }

  double phi(double q) const {
    require_domain(q);
    return phi_unchecked(q);
  }

  /// Standard error of phi(q); zero outside Monte Carlo mode.
  double phi_stderr(double q) const {
    require_domain(q);
    if (mode_ != PhiMode::MonteCarlo) return 0.0;
    double sum = 0.0, sum2 = 0.0;
    for (const auto& s : draws_) {
      const double v = 1.0 - s.power_sum(q + 1.0);
      sum += v;
      sum2 += v * v;
    }
    const double n = static_cast<double>(draws_.size());
    const double var = (sum2 - sum * sum / n) / (n - 1.0);
    return model_.total_rate() * std::sqrt(std::max(var, 0.0) / n);
  }

  PhiDerivs phi_derivs(double q) const {
    require_domain(q);
    switch (mode_) {
      case PhiMode::ClosedForm: return closed_derivs(q);
      case PhiMode::Quadrature: return quadrature_derivs(q);
      default: return finite_difference_derivs(q);
    }
  }

  /// g(q) = Phi(q) - (q + 1) Phi'(q); negative exactly on (p_lower, p_bar).
  double critical_gap(double q) const {
    return phi(q) - (q + 1.0) * phi_derivs(q).first;
  }

 private:
  static PhiMode resolve_mode(const DislocationModel& m, PhiMode requested) {
    const bool closed = m.kind() != ModelKind::Truncated ||
                        (m.family() && m.family()->name == "uniform_binary");
    if (requested == PhiMode::Auto)
      return closed ? PhiMode::ClosedForm : PhiMode::Quadrature;
    if (requested == PhiMode::ClosedForm && !closed)
      fail(ErrorCode::NotComputable, "no closed form for this family");
    return requested;
  }

  static double declared_p_lower(const DislocationModel& m) {
    if (m.kind() == ModelKind::UniformBinary) return -2.0;
    return -std::numeric_limits<double>::infinity();
  }

  double phi_unchecked(double q) const {
    const double k = q + 1.0;
    switch (mode_) {
      case PhiMode::ClosedForm: {
        if (model_.kind() == ModelKind::Atomic) {
          double total = 0.0;
          for (const auto& a : model_.atoms())
            total += a.weight * (1.0 - a.partition.power_sum(k));
          return total;
        }
        const auto& fam = *model_.family();
        const double rate = fam.params.at("rate");
        const double eps = fam.lower;
        if (eps == 0.0) return rate * (1.0 - 2.0 / (q + 2.0));
        const double a = std::pow(1.0 - eps, q + 2.0) - std::pow(eps, q + 2.0);
        return rate * (1.0 - 2.0 * eps) - 2.0 * rate * a / (q + 2.0);
      }
      case PhiMode::Quadrature:
        return binary_moment(q, [](double s, double, double) { return 1.0 - s; });
      default: {
        double total = 0.0;
        for (const auto& s : draws_) total += 1.0 - s.power_sum(k);
        return model_.total_rate() * total / static_cast<double>(draws_.size());
      }
    }
  }

  PhiDerivs closed_derivs(double q) const {
    const double k = q + 1.0;
    PhiDerivs d;
    if (model_.kind() == ModelKind::Atomic) {
      for (const auto& a : model_.atoms()) {
        for (double m : a.partition.masses()) {
          const double l = std::log(m);
          const double w = a.weight * std::pow(m, k);
          d.first -= w * l;
          d.second -= w * l * l;
        }
      }
      return d;
    }
    const auto& fam = *model_.family();
    const double rate = fam.params.at("rate");
    const double eps = fam.lower;
    const double n = q + 2.0;
    if (eps == 0.0) {
      d.first = 2.0 * rate / (n * n);
      d.second = -4.0 * rate / (n * n * n);
      return d;
    }
    const double hi = 1.0 - eps;
    const double lh = std::log(hi);
    const double le = std::log(eps);
    const double ph = std::pow(hi, n);
    const double pe = std::pow(eps, n);
    const double a0 = ph - pe;
    const double a1 = ph * lh - pe * le;
    const double a2 = ph * lh * lh - pe * le * le;
    d.first = -2.0 * rate * (a1 / n - a0 / (n * n));
    d.second = -2.0 * rate * (a2 / n - 2.0 * a1 / (n * n) + 2.0 * a0 / (n * n * n));
    return d;
  }

  // int over binary splits of integrand(s_i^(q+1), log s_i) summed over the
  // two pieces; `combine(sum_pow, sum_pow_log, sum_pow_log2)` selects the
  // moment.
  template <class Combine>
  double binary_moment(double q, Combine combine) const {
    if (model_.kind() == ModelKind::Atomic) {
      double total = 0.0;
      for (const auto& a : model_.atoms()) {
        double p0 = 0.0, p1 = 0.0, p2 = 0.0;
        for (double m : a.partition.masses()) {
          const double l = std::log(m);
          const double w = std::pow(m, q + 1.0);
          p0 += w;
          p1 += w * l;
          p2 += w * l * l;
        }
        total += a.weight * combine(p0, p1, p2);
      }
      return total;
    }
    const auto& fam = *model_.family();
    if (fam.lower == 0.0 && q + 1.0 < 0.0)
      fail(ErrorCode::NotComputable,
           "quadrature needs a bounded integrand; use the closed form");
    auto integrand = [&](double u) {
      const double a = 1.0 - u;
      const double la = std::log1p(-u);
      const double lu = u > 0.0 ? std::log(u) : 0.0;
      const double wa = std::pow(a, q + 1.0);
      const double wu = u > 0.0 ? std::pow(u, q + 1.0) : (q + 1.0 == 0.0 ? 1.0 : 0.0);
      return combine(wa + wu, wa * la + wu * lu, wa * la * la + wu * lu * lu) *
             fam.density(u);
    };
    return numerics::adaptive_simpson(integrand, fam.lower, 0.5, kQuadratureTolerance);
  }

  PhiDerivs quadrature_derivs(double q) const {
    PhiDerivs d;
    d.first = binary_moment(q, [](double, double p1, double) { return -p1; });
    d.second = binary_moment(q, [](double, double, double p2) { return -p2; });
    d.first_err = d.second_err = kQuadratureTolerance;
    return d;
  }

  PhiDerivs finite_difference_derivs(double q) const {
    auto central = [&](double h) {
      const double fp = phi_unchecked(q + h);
      const double f0 = phi_unchecked(q);
      const double fm = phi_unchecked(q - h);
      return std::pair{(fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)};
    };
    const double h = std::max(1e-5, 1e-5 * std::fabs(q));
    const auto [d1, d2] = central(h);
    const auto [e1, e2] = central(2.0 * h);
    return {d1, d2, std::fabs(d1 - e1), std::fabs(d2 - e2)};
  }

  // Per-draw value of g at q, for its standard error in Monte Carlo mode.
  double gap_stderr(double q) const {
    double sum = 0.0, sum2 = 0.0;
    for (const auto& s : draws_) {
      double p0 = 0.0, p1 = 0.0;
      for (double m : s.masses()) {
        const double w = std::pow(m, q + 1.0);
        p0 += w;
        p1 += w * std::log(m);
      }
      const double v = 1.0 - p0 + (q + 1.0) * p1;
      sum += v;
      sum2 += v * v;
    }
    const double n = static_cast<double>(draws_.size());
    const double var = (sum2 - sum * sum / n) / (n - 1.0);
    return model_.total_rate() * std::sqrt(std::max(var, 0.0) / n);
  }

  void locate_p_bar() {
    const bool mc = mode_ == PhiMode::MonteCarlo;
    auto significant = [&](double q, bool want_negative) {
      const double g = critical_gap(q);
      const double band = mc ? 3.0 * gap_stderr(q) : 0.0;
      return want_negative ? g < -band : g > band;
    };
    double lo = std::max(std::isfinite(p_lower_) ? p_lower_ + 1e-6 : 0.0, 0.0);
    if (!significant(lo, true)) {
      if (mc) fail(ErrorCode::AmbiguousBracket,
                   "Phi(q) - (q+1)Phi'(q) is not significantly negative at the "
                   "left end of the bracket");
      fail(ErrorCode::BracketNotFound, "critical gap is not negative at q = 0");
    }
    double step = 0.5;
    double hi = lo + step;
    constexpr double kScanLimit = 1e4;
    while (!(critical_gap(hi) > 0.0)) {
      lo = hi;
      step *= 1.5;
      hi += step;
      if (hi > kScanLimit)
        fail(ErrorCode::BracketNotFound, "no sign change of the critical gap below q = 1e4");
    }
    if (mc && !significant(hi, false))
      fail(ErrorCode::AmbiguousBracket,
           "sign change of the critical gap is within Monte Carlo noise");
    const auto res = numerics::bisect([&](double q) { return critical_gap(q); }, lo, hi,
                                      kPBarTolerance);
    p_bar_ = res.root;
    if (mc) {
      const double slope = -(res.root + 1.0) * phi_derivs(res.root).second;
      p_bar_halfwidth_ = 1.96 * gap_stderr(res.root) / std::fabs(slope);
    }
  }

  DislocationModel model_;
  PhiMode mode_;
  double p_lower_ = 0.0;
  std::vector<MassPartition> draws_;
  std::optional<double> p_bar_;
  double p_bar_halfwidth_ = 0.0;
  std::pair<ErrorCode, std::string> p_bar_error_{ErrorCode::NotComputable, ""};
};

inline double phi(const PhiEvaluator& ev, double q) { return ev.phi(q); }
inline PhiDerivs phi_derivs(const PhiEvaluator& ev, double q) { return ev.phi_derivs(q); }
inline double p_lower(const PhiEvaluator& ev) { return ev.p_lower(); }
inline double p_bar(const PhiEvaluator& ev) { return ev.p_bar(); }

/// E[sum_i X_i(t)^theta] = exp(-t Phi(theta - 1)).
inline double mean_intensity(const PhiEvaluator& ev, double theta, double t) {
  if (t < 0.0) fail(ErrorCode::InvalidArgument, "t must be nonnegative");
  return std::exp(-t * ev.phi(theta - 1.0));
}

/// Rate function on the ray x = -t Phi'(p): (p+1) Phi'(p) - Phi(p).
inline double presence_exponent(const PhiEvaluator& ev, double p) {
  return (p + 1.0) * ev.phi_derivs(p).first - ev.phi(p);
}

/// Limit of sqrt(t) e^(-t((p+1)Phi'(p) - Phi(p))) V(t, -t Phi'(p)).
inline double v_asymptote_constant(const PhiEvaluator& ev, double p, double alpha,
                                   double beta) {
  const auto d = ev.phi_derivs(p);
  const double k = p + 1.0;
  return (std::exp(-k * alpha) - std::exp(-k * beta)) /
         (k * std::sqrt(2.0 * std::numbers::pi * std::fabs(d.second)));
}

/// Predicted V(t, -t Phi'(p)) from the local limit theorem:
/// C e^(t((p+1)Phi'(p) - Phi(p))) / sqrt(t).
inline double v_asymptote(const PhiEvaluator& ev, double p, double t, double alpha,
                          double beta) {
  ev.require_domain(p);
  if (!(alpha <= beta)) fail(ErrorCode::InvalidArgument, "alpha must not exceed beta");
  if (!(t > 0.0)) fail(ErrorCode::InvalidArgument, "t must be positive");
  if (alpha == beta) return 0.0;
  return v_asymptote_constant(ev, p, alpha, beta) *
         std::exp(t * presence_exponent(ev, p)) / std::sqrt(t);
}

/// Smallest integer r in [2, r_max] such that every atom mass is r^(-n) for
/// some integer n >= 1, judged by |log_r(m) - round(log_r(m))| <= tol.
inline GeometricReport detect_geometric(const DislocationModel& model, int r_max = 64,
                                        double tol = 1e-9) {
  GeometricReport report;
  auto fits = [&](double m, int r) {
    const double n = -std::log(m) / std::log(static_cast<double>(r));
    return std::fabs(n - std::round(n)) <= tol && std::round(n) >= 1.0;
  };
  if (model.kind() != ModelKind::Atomic) {
    // Continuous families: look for any draw that rules out every r.
    report.sampled_evidence = true;
    Rng rng(0x13198A2E03707344ULL);
    constexpr std::size_t kDraws = 1000;
    for (; report.draws_tested < kDraws; ++report.draws_tested) {
      const auto s = model.sample(rng);
      bool any = false;
      for (int r = 2; r <= r_max && !any; ++r) {
        bool all = true;
        for (double m : s.masses()) all = all && fits(m, r);
        any = all;
      }
      if (!any) {
        ++report.draws_tested;
        break;
      }
    }
    return report;
  }
  for (int r = 2; r <= r_max; ++r) {
    bool all = true;
    for (const auto& a : model.atoms())
      for (double m : a.partition.masses()) all = all && fits(m, r);
    if (all) {
      report.r = r;
      return report;
    }
  }
  return report;
}

}  // namespace fragsim
