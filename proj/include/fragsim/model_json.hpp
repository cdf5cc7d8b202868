#pragma once

// JSON form of a dislocation model:
//   {"kind": "atomic", "atoms": [[[0.5, 0.5], 1.0], ...]}
//   {"kind": "uniform_binary", "total_rate": 1.0}
//   {"kind": "truncated", "family": "binary_power",
//    "params": {"c": 1.0, "alpha": 0.5}, "epsilon": 0.01}
// Unknown kinds and unknown fields are rejected.

#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fragsim/error.hpp"
#include "fragsim/measures.hpp"

namespace fragsim {

struct ConfigIssue {
  ErrorCode code;
  std::string field;
  std::string message;
};

inline std::string describe(const ConfigIssue& i) {
  return std::string(to_string(i.code)) + " at '" + i.field + "': " + i.message;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& where, std::vector<ConfigIssue>& issues) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      issues.push_back({ErrorCode::UnknownField, where + "." + key, "unknown field"});
}

inline std::optional<double> number_field(const nlohmann::json& j, const std::string& key,
                                          const std::string& where,
                                          std::vector<ConfigIssue>& issues, bool required) {
  if (!j.contains(key)) {
    if (required) issues.push_back({ErrorCode::InvalidModel, where + "." + key, "missing"});
    return std::nullopt;
  }
  if (!j.at(key).is_number()) {
    issues.push_back({ErrorCode::InvalidModel, where + "." + key, "must be a number"});
    return std::nullopt;
  }
  return j.at(key).get<double>();
}

}  // namespace detail

/// Appends every problem found to `issues`; returns a model only when none
/// were found in this description.
inline std::optional<DislocationModel> parse_model(const nlohmann::json& j,
                                                   std::vector<ConfigIssue>& issues,
                                                   const std::string& where = "model") {
  const std::size_t before = issues.size();
  if (!j.is_object()) {
    issues.push_back({ErrorCode::InvalidModel, where, "model must be a JSON object"});
    return std::nullopt;
  }
  if (!j.contains("kind") || !j.at("kind").is_string()) {
    issues.push_back({ErrorCode::InvalidModel, where + ".kind", "missing or not a string"});
    return std::nullopt;
  }
  const auto kind = j.at("kind").get<std::string>();
  auto attempt = [&](auto&& build) -> std::optional<DislocationModel> {
    if (issues.size() != before) return std::nullopt;
    try {
      return build();
    } catch (const Error& e) {
      issues.push_back({e.code(), where, e.what()});
      return std::nullopt;
    }
  };

  if (kind == "atomic") {
    detail::reject_unknown(j, {"kind", "atoms", "total_rate"}, where, issues);
    if (!j.contains("atoms") || !j.at("atoms").is_array() || j.at("atoms").empty()) {
      issues.push_back({ErrorCode::InvalidModel, where + ".atoms", "must be a nonempty array"});
      return std::nullopt;
    }
    std::vector<std::pair<std::vector<double>, double>> raw;
    for (std::size_t i = 0; i < j.at("atoms").size(); ++i) {
      const auto& a = j.at("atoms")[i];
      const std::string at = where + ".atoms[" + std::to_string(i) + "]";
      if (!a.is_array() || a.size() != 2 || !a[0].is_array() || !a[1].is_number()) {
        issues.push_back({ErrorCode::InvalidModel, at, "expected [[masses...], weight]"});
        continue;
      }
      std::vector<double> masses;
      bool ok = true;
      for (const auto& m : a[0]) {
        if (!m.is_number()) ok = false;
        else masses.push_back(m.get<double>());
      }
      if (!ok) {
        issues.push_back({ErrorCode::InvalidModel, at, "masses must be numbers"});
        continue;
      }
      try {
        validate(masses);
      } catch (const Error& e) {
        issues.push_back({e.code(), at, e.what()});
        continue;
      }
      raw.emplace_back(std::move(masses), a[1].get<double>());
    }
    auto model = attempt([&] {
      std::vector<Atom> atoms;
      for (auto& [m, w] : raw) atoms.push_back({validate(m), w});
      return DislocationModel::atomic(std::move(atoms));
    });
    if (model && j.contains("total_rate")) {
      const auto r = detail::number_field(j, "total_rate", where, issues, false);
      if (r && std::fabs(*r - model->total_rate()) > 1e-12 * std::max(1.0, *r)) {
        issues.push_back({ErrorCode::InvalidModel, where + ".total_rate",
                          "does not equal the sum of atom weights"});
        return std::nullopt;
      }
    }
    return model;
  }
  if (kind == "uniform_binary") {
    detail::reject_unknown(j, {"kind", "total_rate"}, where, issues);
    const auto r = detail::number_field(j, "total_rate", where, issues, false);
    return attempt([&] { return DislocationModel::uniform_binary(r.value_or(1.0)); });
  }
  if (kind == "truncated") {
    detail::reject_unknown(j, {"kind", "family", "params", "epsilon"}, where, issues);
    if (!j.contains("family") || !j.at("family").is_string())
      issues.push_back({ErrorCode::InvalidModel, where + ".family", "missing or not a string"});
    const auto eps = detail::number_field(j, "epsilon", where, issues, true);
    FamilyParams params;
    if (j.contains("params")) {
      if (!j.at("params").is_object()) {
        issues.push_back({ErrorCode::InvalidModel, where + ".params", "must be an object"});
      } else {
        for (const auto& [key, v] : j.at("params").items()) {
          if (v.is_number()) params[key] = v.get<double>();
          else issues.push_back({ErrorCode::InvalidModel, where + ".params." + key, "must be a number"});
        }
      }
    }
    return attempt([&] { return truncate_family(j.at("family").get<std::string>(), params, *eps); });
  }
  issues.push_back({ErrorCode::UnknownField, where + ".kind", "unknown kind '" + kind + "'"});
  return std::nullopt;
}

/// Throws the first issue; convenience for callers that do not collect.
inline DislocationModel parse_model(const nlohmann::json& j) {
  std::vector<ConfigIssue> issues;
  auto m = parse_model(j, issues);
  if (!m) fail(issues.front().code, describe(issues.front()));
  return *m;
}

inline nlohmann::json model_to_json(const DislocationModel& m) {
  using nlohmann::json;
  switch (m.kind()) {
    case ModelKind::Atomic: {
      json atoms = json::array();
      for (const auto& a : m.atoms()) {
        json masses = json::array();
        for (double x : a.partition.masses()) masses.push_back(x);
        atoms.push_back(json::array({masses, a.weight}));
      }
      return {{"kind", "atomic"}, {"atoms", atoms}};
    }
    case ModelKind::UniformBinary:
      return {{"kind", "uniform_binary"}, {"total_rate", m.total_rate()}};
    case ModelKind::Truncated: {
      json params = json::object();
      for (const auto& [k, v] : m.family()->params) params[k] = v;
      return {{"kind", "truncated"},
              {"family", m.family()->name},
              {"params", params},
              {"epsilon", m.epsilon()}};
    }
  }
  return {};
}

}  // namespace fragsim
