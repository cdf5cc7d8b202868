#pragma once

// Mass partitions and finite dislocation measures.
//
// A MassPartition is a ranked list of strictly positive masses with total at
// most one; the zeros that complete it to an infinite sequence are implicit.
// A DislocationModel is a finite measure on mass partitions, given either by
// a weighted list of atoms or by one of the built-in binary families
// restricted to splits with 1 - s1 > epsilon.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fragsim/error.hpp"
#include "fragsim/rng.hpp"

namespace fragsim {

inline constexpr double kSumTolerance = 1e-12;
inline constexpr double kConservativeTolerance = 1e-9;

class MassPartition {
 public:
  /// The unit configuration (1, 0, 0, ...).
  MassPartition() : masses_{1.0} {}

  /// Sorts `raw` in decreasing order and checks positivity and total mass.
  /// The trivial configuration (1) is allowed here; see `validate` for the
  /// stricter check applied to dislocation atoms.
  static MassPartition ranked(std::vector<double> raw) {
    if (raw.empty()) fail(ErrorCode::EmptyPartition, "empty mass list");
    double total = 0.0;
    for (double m : raw) {
      if (!std::isfinite(m)) fail(ErrorCode::NonFiniteEntry, "non-finite mass");
      if (m <= 0.0)
        fail(ErrorCode::NonPositiveEntry,
             "mass " + std::to_string(m) + " is not positive");
      total += m;
    }
    if (total > 1.0 + kSumTolerance)
      fail(ErrorCode::SumExceedsOne,
           "masses sum to " + std::to_string(total));
    std::sort(raw.begin(), raw.end(), std::greater<>());
    MassPartition s;
    s.masses_ = std::move(raw);
    return s;
  }

  /// Binary split (1 - u, u) with 0 < u <= 1/2; skips the sort.
  static MassPartition binary(double u) {
    MassPartition s;
    s.masses_ = {1.0 - u, u};
    return s;
  }

  std::span<const double> masses() const noexcept { return masses_; }
  std::size_t size() const noexcept { return masses_.size(); }
  double operator[](std::size_t i) const noexcept { return masses_[i]; }
  double largest() const noexcept { return masses_.front(); }

  double sum() const noexcept {
    double total = 0.0;
    for (double m : masses_) total += m;
    return total;
  }

  bool conservative(double tol = kConservativeTolerance) const noexcept {
    return std::fabs(sum() - 1.0) <= tol;
  }

  bool trivial() const noexcept {
    return masses_.size() == 1 && masses_.front() >= 1.0 - kSumTolerance;
  }

  /// sum_i s_i^exponent
  double power_sum(double exponent) const noexcept {
    double total = 0.0;
    for (double m : masses_) total += std::pow(m, exponent);
    return total;
  }

  friend bool operator==(const MassPartition&, const MassPartition&) = default;

 private:
  std::vector<double> masses_;
};

/// Validates a raw list as a dislocation atom: ranked, positive, total <= 1,
/// and not the trivial split (1).
inline MassPartition validate(std::span<const double> raw) {
  auto s = MassPartition::ranked(std::vector<double>(raw.begin(), raw.end()));
  if (s.trivial())
    fail(ErrorCode::TrivialSplit, "the split (1, 0, ...) carries no mass");
  return s;
}

struct SplitSample {
  MassPartition partition;
  double weight = 1.0;
};

struct Atom {
  MassPartition partition;
  double weight;
};

enum class ModelKind { Atomic, UniformBinary, Truncated };

using FamilyParams = std::map<std::string, double>;

/// Binary splits (1 - u, u) with u = 1 - s1 in (lower, 1/2] and nu(du) =
/// density(u) du.
///
///   uniform_binary: density 2 * rate           (rate = nu(S) untruncated)
///   binary_power:   density c * u^(-1 - alpha), alpha in (0, 1)
struct BinaryFamily {
  std::string name;
  FamilyParams params;
  double lower = 0.0;

  double density(double u) const {
    if (name == "uniform_binary") return 2.0 * params.at("rate");
    return params.at("c") * std::pow(u, -1.0 - params.at("alpha"));
  }

  double mass() const {
    if (name == "uniform_binary") return params.at("rate") * (1.0 - 2.0 * lower);
    const double c = params.at("c");
    const double alpha = params.at("alpha");
    return c / alpha * (std::pow(lower, -alpha) - std::pow(0.5, -alpha));
  }

  /// Draw u from density / mass on (lower, 1/2].
  template <class URBG>
  double sample_u(URBG& rng) const {
    const double v = uniform01(rng);
    if (name == "uniform_binary") {
      if (lower == 0.0) return std::min(v, 1.0 - v);
      return lower + (0.5 - lower) * v;
    }
    const double alpha = params.at("alpha");
    const double top = std::pow(lower, -alpha);
    const double bottom = std::pow(0.5, -alpha);
    return std::pow(top - v * (top - bottom), -1.0 / alpha);
  }
};

class DislocationModel {
 public:
  static DislocationModel atomic(std::vector<Atom> atoms) {
    if (atoms.empty()) fail(ErrorCode::InvalidModel, "atomic model without atoms");
    DislocationModel m;
    m.kind_ = ModelKind::Atomic;
    m.conservative_ = true;
    double total = 0.0;
    m.cumulative_.reserve(atoms.size());
    for (const auto& a : atoms) {
      if (!(a.weight > 0.0) || !std::isfinite(a.weight))
        fail(ErrorCode::InvalidModel, "atom weights must be positive and finite");
      if (a.partition.trivial())
        fail(ErrorCode::TrivialSplit, "the split (1, 0, ...) carries no mass");
      total += a.weight;
      m.cumulative_.push_back(total);
      m.conservative_ = m.conservative_ && a.partition.conservative();
    }
    if (!std::isfinite(total)) fail(ErrorCode::InvalidModel, "infinite total rate");
    m.total_rate_ = total;
    m.atoms_ = std::move(atoms);
    return m;
  }

  /// Convenience: atoms given as raw mass lists.
  static DislocationModel atomic(
      std::initializer_list<std::pair<std::vector<double>, double>> raw) {
    std::vector<Atom> atoms;
    for (const auto& [masses, w] : raw) atoms.push_back({validate(masses), w});
    return atomic(std::move(atoms));
  }

  /// nu = rate * law of (max(U, 1-U), min(U, 1-U)), U uniform on (0, 1).
  static DislocationModel uniform_binary(double rate = 1.0) {
    if (!(rate > 0.0) || !std::isfinite(rate))
      fail(ErrorCode::InvalidModel, "uniform_binary rate must be positive");
    DislocationModel m;
    m.kind_ = ModelKind::UniformBinary;
    m.conservative_ = true;
    m.family_ = BinaryFamily{"uniform_binary", {{"rate", rate}}, 0.0};
    m.total_rate_ = rate;
    return m;
  }

  ModelKind kind() const noexcept { return kind_; }
  double total_rate() const noexcept { return total_rate_; }
  bool conservative() const noexcept { return conservative_; }
  /// Truncation level; 0 for models that are finite as given.
  double epsilon() const noexcept { return family_ ? family_->lower : 0.0; }
  const std::vector<Atom>& atoms() const noexcept { return atoms_; }
  const std::optional<BinaryFamily>& family() const noexcept { return family_; }

  template <class URBG>
  MassPartition sample(URBG& rng) const {
    if (kind_ == ModelKind::Atomic) {
      const double target = uniform01(rng) * total_rate_;
      auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
      const auto idx = std::min<std::size_t>(
          static_cast<std::size_t>(it - cumulative_.begin()), atoms_.size() - 1);
      return atoms_[idx].partition;
    }
    return MassPartition::binary(family_->sample_u(rng));
  }

 private:
  friend DislocationModel truncate_family(const std::string&, const FamilyParams&,
                                          double);
  DislocationModel() = default;

  ModelKind kind_ = ModelKind::Atomic;
  double total_rate_ = 0.0;
  bool conservative_ = true;
  std::vector<Atom> atoms_;
  std::vector<double> cumulative_;
  std::optional<BinaryFamily> family_;
};

/// Draw s ~ nu / nu(S).
template <class URBG>
SplitSample sample_split(const DislocationModel& model, URBG& rng) {
  return {model.sample(rng), 1.0};
}

/// Restriction of a named binary family to {1 - s1 > epsilon}.
///
/// `uniform_binary` takes an optional "rate" (default 1) and is finite for
/// epsilon = 0. `binary_power` takes "c" > 0 and "alpha" in (0, 1); it has
/// infinite total mass, so epsilon must be positive.
inline DislocationModel truncate_family(const std::string& family_name,
                                        const FamilyParams& params,
                                        double epsilon) {
  if (!(epsilon >= 0.0) || !(epsilon < 0.5))
    fail(ErrorCode::RateNotComputable,
         "epsilon must lie in [0, 1/2) for binary families");
  auto param = [&](const std::string& key, std::optional<double> fallback) {
    auto it = params.find(key);
    if (it != params.end()) return it->second;
    if (fallback) return *fallback;
    fail(ErrorCode::InvalidModel, family_name + " requires parameter '" + key + "'");
  };
  BinaryFamily fam;
  fam.name = family_name;
  fam.lower = epsilon;
  if (family_name == "uniform_binary") {
    const double rate = param("rate", 1.0);
    if (!(rate > 0.0)) fail(ErrorCode::InvalidModel, "rate must be positive");
    if (epsilon == 0.0) return DislocationModel::uniform_binary(rate);
    fam.params = {{"rate", rate}};
  } else if (family_name == "binary_power") {
    const double c = param("c", std::nullopt);
    const double alpha = param("alpha", std::nullopt);
    if (!(c > 0.0)) fail(ErrorCode::InvalidModel, "c must be positive");
    if (!(alpha > 0.0 && alpha < 1.0))
      fail(ErrorCode::InvalidModel, "alpha must lie in (0, 1)");
    if (epsilon == 0.0)
      fail(ErrorCode::RateNotComputable,
           "binary_power has infinite total mass; epsilon must be positive");
    fam.params = {{"c", c}, {"alpha", alpha}};
  } else {
    fail(ErrorCode::UnknownFamily, "unknown family '" + family_name + "'");
  }
  for (const auto& [key, value] : params) {
    if (!fam.params.count(key))
      fail(ErrorCode::InvalidModel, family_name + " has no parameter '" + key + "'");
  }
  const double rate = fam.mass();
  if (!(rate > 0.0) || !std::isfinite(rate))
    fail(ErrorCode::RateNotComputable, "truncated rate is not finite and positive");
  DislocationModel m;
  m.kind_ = ModelKind::Truncated;
  m.conservative_ = true;
  m.total_rate_ = rate;
  m.family_ = std::move(fam);
  return m;
}

// Reference models used throughout the tests and examples.
inline DislocationModel dyadic_model() {
  return DislocationModel::atomic({{{0.5, 0.5}, 1.0}});
}

}  // namespace fragsim
