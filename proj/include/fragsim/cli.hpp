#pragma once

// Configuration, dispatch and result emission for the fragsim tool.
//
// A run is described by one JSON document
//   {"command": "...", "model": {...}, "seed": 7, "replicas": 100,
//    "threads": 4, "out": "path", "strict": false, "params": {...}}
// which may come from --config and be overridden by flags. Every output
// starts with a header line that echoes the whole document except the
// thread count and the output path, so the header reproduces the run.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fragsim/analytics.hpp"
#include "fragsim/error.hpp"
#include "fragsim/ldp.hpp"
#include "fragsim/martingales.hpp"
#include "fragsim/measures.hpp"
#include "fragsim/model_json.hpp"
#include "fragsim/parallel.hpp"
#include "fragsim/partition_sim.hpp"
#include "fragsim/ranked_sim.hpp"
#include "fragsim/rng.hpp"
#include "fragsim/tilting.hpp"

namespace fragsim::cli {

using nlohmann::json;

inline constexpr std::string_view kSchema = "fragsim/1";
inline constexpr std::string_view kVersion = "1.0.0";

enum class ParamType { Number, Integer, Bool, String, NumberList };

struct ParamSpec {
  std::string key;
  ParamType type;
  json fallback;  // null when there is no default
  bool required = false;
  std::string help;
  std::vector<std::string> choices = {};
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"phi",    "simulate", "partition", "subordinator",
                                              "martingale", "spine", "thin",      "ldp"};
  return names;
}

inline std::vector<ParamSpec> param_schema(const std::string& command) {
  using T = ParamType;
  const ParamSpec eps{"epsilon_freeze", T::Number, 1e-6, false, "freezing threshold for masses"};
  const ParamSpec cap{"population_cap", T::Integer, 10'000'000, false, "live fragment budget"};
  if (command == "phi")
    return {{"q_min", T::Number, 0.0, false, "first grid point"},
            {"q_max", T::Number, 5.0, false, "last grid point"},
            {"q_steps", T::Integer, 51, false, "number of grid points"},
            {"mode", T::String, "auto", false, "evaluation mode",
             {"auto", "closed_form", "quadrature", "monte_carlo"}},
            {"mc_samples", T::Integer, 200000, false, "draws for monte_carlo mode"}};
  if (command == "simulate")
    return {{"t_end", T::Number, json(), true, "final time"},
            {"snapshot_times", T::NumberList, json(), false, "snapshot times (default t_end)"},
            eps,
            cap,
            {"barrier", T::Bool, false, false, "track lineage peaks against the p_bar line"}};
  if (command == "partition")
    return {{"n", T::Integer, json(), true, "size of the restricted set"},
            {"t_end", T::Number, json(), true, "final time"}};
  if (command == "subordinator")
    return {{"t_end", T::Number, json(), true, "final time"},
            {"format", T::String, "csv", false, "csv jump table or events JSONL",
             {"csv", "events"}}};
  if (command == "martingale")
    return {{"kind", T::String, json(), true, "martingale", {"additive", "derivative", "truncated"}},
            {"p", T::Number, json(), false, "exponent (additive)"},
            {"a", T::Number, json(), false, "barrier offset (truncated)"},
            {"t_grid", T::NumberList, json(), true, "evaluation times"},
            eps,
            cap};
  if (command == "spine")
    return {{"p", T::Number, json(), true, "tilting exponent"},
            {"t_end", T::Number, json(), true, "final time"},
            {"with_population", T::Bool, false, false, "materialize unmarked subpopulations"},
            eps};
  if (command == "thin")
    return {{"input", T::String, json(), true, "EventLog JSONL to thin"},
            {"p", T::Number, json(), true, "thinning exponent"}};
  if (command == "ldp")
    return {{"p", T::Number, json(), true, "exponent selecting the ray x = -t Phi'(p)"},
            {"alpha", T::Number, -0.5, false, "window start relative to x"},
            {"beta", T::Number, 0.5, false, "window end relative to x"},
            {"t_grid", T::NumberList, json(), true, "evaluation times"},
            {"estimator", T::String, "both", false, "estimator",
             {"direct", "manyto1", "both", "u", "ratio"}},
            {"x_override", T::Number, json(), false, "fixed x instead of -t Phi'(p)"},
            {"bootstrap", T::Integer, 1000, false, "bootstrap resamples for ratio CIs"},
            eps,
            cap};
  return {};
}

struct RunConfig {
  std::string command;
  json model_spec;
  std::optional<DislocationModel> model;
  std::uint64_t seed = 0;
  std::size_t replicas = 1;
  unsigned threads = 1;
  std::string out;
  bool strict = false;
  json params = json::object();
};

struct ParseOutcome {
  std::optional<RunConfig> config;
  std::vector<ConfigIssue> issues;
};

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ConfigError, "'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Model given on the command line: a reference name, inline JSON, or a
/// path to a JSON file.
inline json model_argument(const std::string& text) {
  if (text == "uniform_binary") return {{"kind", "uniform_binary"}, {"total_rate", 1.0}};
  if (text == "dyadic") return model_to_json(dyadic_model());
  if (!text.empty() && text.front() == '{') {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::ConfigError, std::string("model is not valid JSON: ") + e.what());
    }
  }
  return load_json_file(text);
}

inline std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    return std::nullopt;
  }
  return v;
}

/// Converts a flag value to the JSON form used in the params object.
inline std::optional<json> param_from_string(const ParamSpec& spec, const std::string& text,
                                             std::vector<ConfigIssue>& issues) {
  const auto field = "params." + spec.key;
  switch (spec.type) {
    case ParamType::Number: {
      auto v = parse_number(text);
      if (!v) break;
      return *v;
    }
    case ParamType::Integer: {
      long long v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) break;
      return v;
    }
    case ParamType::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      break;
    case ParamType::String:
      return text;
    case ParamType::NumberList: {
      json list = json::array();
      std::stringstream ss(text);
      std::string item;
      bool ok = true;
      while (std::getline(ss, item, ',')) {
        auto v = parse_number(item);
        if (!v) ok = false;
        else list.push_back(*v);
      }
      if (!ok || list.empty()) break;
      return list;
    }
  }
  issues.push_back({ErrorCode::ConfigError, field, "cannot parse '" + text + "'"});
  return std::nullopt;
}

namespace detail {

inline bool type_matches(ParamType t, const json& v) {
  switch (t) {
    case ParamType::Number: return v.is_number();
    case ParamType::Integer: return v.is_number_integer();
    case ParamType::Bool: return v.is_boolean();
    case ParamType::String: return v.is_string();
    case ParamType::NumberList:
      if (!v.is_array() || v.empty()) return false;
      for (const auto& x : v)
        if (!x.is_number()) return false;
      return true;
  }
  return false;
}

inline std::string type_name(ParamType t) {
  switch (t) {
    case ParamType::Number: return "a number";
    case ParamType::Integer: return "an integer";
    case ParamType::Bool: return "a boolean";
    case ParamType::String: return "a string";
    case ParamType::NumberList: return "a nonempty list of numbers";
  }
  return "";
}

inline void check_grid(const json& grid, const std::string& field, std::vector<ConfigIssue>& issues) {
  double prev = -1.0;
  for (const auto& x : grid) {
    const double t = x.get<double>();
    if (!(t >= 0.0) || !std::isfinite(t)) {
      issues.push_back({ErrorCode::ConfigError, field, "times must be finite and nonnegative"});
      return;
    }
    if (!(t > prev)) {
      issues.push_back({ErrorCode::ConfigError, field, "times must be strictly increasing"});
      return;
    }
    prev = t;
  }
}

}  // namespace detail

/// Validates a run document and reports every problem found, not only the
/// first.
inline ParseOutcome parse_config(const json& doc) {
  ParseOutcome out;
  auto& issues = out.issues;
  if (!doc.is_object()) {
    issues.push_back({ErrorCode::ConfigError, "", "configuration must be a JSON object"});
    return out;
  }
  static const std::set<std::string> top{"command", "model", "seed", "replicas",
                                         "threads", "out",   "strict", "params"};
  fragsim::detail::reject_unknown(doc, top, "config", issues);

  RunConfig cfg;
  if (!doc.contains("command") || !doc.at("command").is_string()) {
    issues.push_back({ErrorCode::ConfigError, "command", "missing"});
  } else {
    cfg.command = doc.at("command").get<std::string>();
    const auto& names = commands();
    if (std::find(names.begin(), names.end(), cfg.command) == names.end())
      issues.push_back({ErrorCode::UnknownField, "command", "unknown command '" + cfg.command + "'"});
  }

  if (!doc.contains("seed")) {
    issues.push_back({ErrorCode::SeedMissing, "seed", "a master seed is required"});
  } else if (const auto& sd = doc.at("seed");
             !sd.is_number_unsigned() && !(sd.is_number_integer() && sd.get<long long>() >= 0)) {
    issues.push_back({ErrorCode::ConfigError, "seed", "must be a nonnegative 64-bit integer"});
  } else {
    cfg.seed = doc.at("seed").get<std::uint64_t>();
  }

  if (doc.contains("replicas")) {
    const auto& r = doc.at("replicas");
    if (!r.is_number_integer() || r.get<long long>() < 1)
      issues.push_back({ErrorCode::ConfigError, "replicas", "must be a positive integer"});
    else cfg.replicas = r.get<std::size_t>();
  }
  if (doc.contains("threads")) {
    const auto& t = doc.at("threads");
    if (!t.is_number_integer() || t.get<long long>() < 1)
      issues.push_back({ErrorCode::ConfigError, "threads", "must be a positive integer"});
    else cfg.threads = t.get<unsigned>();
  }
  if (doc.contains("out")) {
    if (!doc.at("out").is_string()) issues.push_back({ErrorCode::ConfigError, "out", "must be a string"});
    else cfg.out = doc.at("out").get<std::string>();
  }
  if (doc.contains("strict")) {
    if (!doc.at("strict").is_boolean())
      issues.push_back({ErrorCode::ConfigError, "strict", "must be a boolean"});
    else cfg.strict = doc.at("strict").get<bool>();
  }

  const bool needs_model = cfg.command != "thin";
  if (doc.contains("model")) {
    cfg.model_spec = doc.at("model");
    cfg.model = parse_model(cfg.model_spec, issues);
  } else if (needs_model) {
    issues.push_back({ErrorCode::InvalidModel, "model", "missing"});
  }

  const auto schema = param_schema(cfg.command);
  json params = doc.contains("params") ? doc.at("params") : json::object();
  if (!params.is_object()) {
    issues.push_back({ErrorCode::ConfigError, "params", "must be an object"});
    params = json::object();
  }
  std::set<std::string> known;
  for (const auto& spec : schema) known.insert(spec.key);
  if (!cfg.command.empty() && !schema.empty()) fragsim::detail::reject_unknown(params, known, "params", issues);
  for (const auto& spec : schema) {
    const auto field = "params." + spec.key;
    if (!params.contains(spec.key)) {
      if (spec.required) issues.push_back({ErrorCode::ConfigError, field, "required"});
      else if (!spec.fallback.is_null()) cfg.params[spec.key] = spec.fallback;
      continue;
    }
    const auto& v = params.at(spec.key);
    if (!detail::type_matches(spec.type, v)) {
      issues.push_back({ErrorCode::ConfigError, field, "must be " + detail::type_name(spec.type)});
      continue;
    }
    if (!spec.choices.empty() &&
        std::find(spec.choices.begin(), spec.choices.end(), v.get<std::string>()) == spec.choices.end()) {
      issues.push_back({ErrorCode::ConfigError, field, "unknown choice '" + v.get<std::string>() + "'"});
      continue;
    }
    cfg.params[spec.key] = v;
  }

  // Command-specific constraints.
  const auto& p = cfg.params;
  auto positive = [&](const char* key) {
    if (p.contains(key) && !(p.at(key).get<double>() > 0.0))
      issues.push_back({ErrorCode::ConfigError, std::string("params.") + key, "must be positive"});
  };
  auto nonnegative = [&](const char* key) {
    if (p.contains(key) && !(p.at(key).get<double>() >= 0.0))
      issues.push_back({ErrorCode::ConfigError, std::string("params.") + key, "must be nonnegative"});
  };
  positive("epsilon_freeze");
  positive("population_cap");
  nonnegative("t_end");
  for (const char* key : {"t_grid", "snapshot_times"})
    if (p.contains(key)) detail::check_grid(p.at(key), std::string("params.") + key, issues);
  if (cfg.command == "phi") {
    if (p.contains("q_steps") && p.at("q_steps").get<long long>() < 1)
      issues.push_back({ErrorCode::ConfigError, "params.q_steps", "must be positive"});
    if (p.contains("q_min") && p.contains("q_max") &&
        p.at("q_min").get<double>() > p.at("q_max").get<double>())
      issues.push_back({ErrorCode::ConfigError, "params.q_min", "must not exceed q_max"});
  }
  if (cfg.command == "partition" && p.contains("n") && p.at("n").get<long long>() < 1)
    issues.push_back({ErrorCode::ConfigError, "params.n", "must be positive"});
  if (cfg.command == "martingale" && p.contains("kind")) {
    const auto kind = p.at("kind").get<std::string>();
    if (kind == "additive" && !p.contains("p"))
      issues.push_back({ErrorCode::ConfigError, "params.p", "required for kind additive"});
    if (kind == "truncated") {
      if (!p.contains("a")) issues.push_back({ErrorCode::ConfigError, "params.a", "required for kind truncated"});
      else positive("a");
    }
  }
  if ((cfg.command == "martingale" || cfg.command == "ldp") && cfg.replicas < 2)
    issues.push_back({ErrorCode::ConfigError, "replicas", "at least 2 replicas are needed"});
  if (cfg.command == "ldp" && p.contains("alpha") && p.contains("beta") &&
      !(p.at("alpha").get<double>() < p.at("beta").get<double>()))
    issues.push_back({ErrorCode::ConfigError, "params.alpha", "must be below beta"});
  if (cfg.command == "simulate" && p.contains("snapshot_times") && p.contains("t_end")) {
    for (const auto& x : p.at("snapshot_times"))
      if (x.get<double>() > p.at("t_end").get<double>())
        issues.push_back({ErrorCode::ConfigError, "params.snapshot_times", "times beyond t_end"});
  }

  if (issues.empty()) out.config = std::move(cfg);
  return out;
}

struct ResultRecord {
  json header;
  bool jsonl = false;
  std::string body;
  std::vector<Warning> warnings;

  /// Header line followed by the body. CSV headers are prefixed by "# ".
  std::string text() const {
    std::string s = jsonl ? json{{"header", header}}.dump() : "# " + header.dump();
    s += '\n';
    s += body;
    return s;
  }
};

/// Shortest representation that reads back to the same double.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return num(v);
}

namespace detail {

struct Csv {
  std::string text;

  template <class... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    auto put = [&](const auto& c) {
      if (!first) text += ',';
      first = false;
      if constexpr (std::is_convertible_v<decltype(c), std::string_view>) text += c;
      else if constexpr (std::is_floating_point_v<std::decay_t<decltype(c)>>) text += num(c);
      else text += std::to_string(c);
    };
    (put(cells), ...);
    text += '\n';
  }
};

inline std::vector<double> grid_of(const json& j) { return j.get<std::vector<double>>(); }

inline json warnings_json(const std::vector<Warning>& ws) {
  json a = json::array();
  for (const auto& w : ws) a.push_back({{"code", to_string(w.code)}, {"message", w.message}});
  return a;
}

}  // namespace detail

inline json base_header(const RunConfig& cfg, const PhiEvaluator* ev) {
  json h;
  h["schema"] = kSchema;
  h["version"] = kVersion;
  h["command"] = cfg.command;
  h["seed"] = cfg.seed;
  h["replicas"] = cfg.replicas;
  h["params"] = cfg.params;
  if (cfg.model) {
    h["model"] = model_to_json(*cfg.model);
    h["total_rate"] = cfg.model->total_rate();
    h["conservative"] = cfg.model->conservative();
    h["truncation_epsilon"] = cfg.model->epsilon();
    const auto geo = detect_geometric(*cfg.model);
    h["geometric"] = geo.r ? json(*geo.r) : json();
  }
  if (ev) {
    h["phi_mode"] = to_string(ev->mode());
    h["p_lower"] = finite_or_string(ev->p_lower());
    try {
      h["p_bar"] = ev->p_bar();
      if (ev->p_bar_halfwidth() > 0.0) h["p_bar_halfwidth95"] = ev->p_bar_halfwidth();
    } catch (const Error& e) {
      h["p_bar"] = json();
      h["p_bar_error"] = e.what();
    }
  }
  if (cfg.params.contains("epsilon_freeze")) h["epsilon_freeze"] = cfg.params.at("epsilon_freeze");
  return h;
}

namespace detail {

inline ResultRecord run_phi(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const auto mode_name = p.at("mode").get<std::string>();
  PhiMode mode = PhiMode::Auto;
  if (mode_name == "closed_form") mode = PhiMode::ClosedForm;
  if (mode_name == "quadrature") mode = PhiMode::Quadrature;
  if (mode_name == "monte_carlo") mode = PhiMode::MonteCarlo;
  const PhiEvaluator ev(*cfg.model, mode, p.at("mc_samples").get<std::size_t>(),
                        derive_key(cfg.seed, 0xF1));
  ResultRecord rec;
  rec.header = base_header(cfg, &ev);
  Csv csv;
  csv.row("q", "phi", "dphi", "d2phi");
  const double lo = p.at("q_min").get<double>();
  const double hi = p.at("q_max").get<double>();
  const auto steps = p.at("q_steps").get<std::size_t>();
  for (std::size_t k = 0; k < steps; ++k) {
    const double q = steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / (steps - 1.0);
    const auto d = ev.phi_derivs(q);
    csv.row(q, ev.phi(q), d.first, d.second);
  }
  rec.body = std::move(csv.text);
  return rec;
}

inline ResultRecord run_simulate(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const PhiEvaluator ev(*cfg.model);
  ResultRecord rec;
  rec.jsonl = true;
  rec.header = base_header(cfg, &ev);
  ReplicaOptions ro;
  const double t_end = p.at("t_end").get<double>();
  ro.t_grid = p.contains("snapshot_times") ? grid_of(p.at("snapshot_times")) : std::vector<double>{t_end};
  ro.replicas = cfg.replicas;
  ro.seed = cfg.seed;
  ro.threads = cfg.threads;
  ro.epsilon_freeze = p.at("epsilon_freeze").get<double>();
  ro.population_cap = p.at("population_cap").get<std::size_t>();
  if (p.at("barrier").get<bool>()) ro.barrier_slope = ev.phi_derivs(ev.p_bar()).first;
  auto lines = replicate(*cfg.model, ro, [&](std::size_t i, const std::vector<PopulationSnapshot>& snaps) {
    std::string text;
    for (const auto& s : snaps) {
      json masses = json::array();
      for (const auto& f : s.live) masses.push_back(f.log_mass);
      json line{{"replica", i},
                {"t", s.time},
                {"log_masses", masses},
                {"frozen_mass", s.frozen_mass},
                {"epsilon", s.epsilon_freeze},
                {"seed", s.seed},
                {"events", s.event_count}};
      if (ro.barrier_slope) {
        json peaks = json::array();
        for (const auto& f : s.live) peaks.push_back(f.barrier_peak);
        line["barrier_peaks"] = peaks;
      }
      text += line.dump();
      text += '\n';
    }
    return text;
  });
  for (auto& l : lines) rec.body += l;
  return rec;
}

inline ResultRecord run_partition(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const PhiEvaluator ev(*cfg.model);
  ResultRecord rec;
  rec.jsonl = true;
  rec.header = base_header(cfg, &ev);
  const auto n = p.at("n").get<std::size_t>();
  const double t_end = p.at("t_end").get<double>();
  auto lines = parallel_replicas(cfg.replicas, cfg.threads, [&](std::size_t i) {
    const auto path = simulate_partition(*cfg.model, ev, n, t_end, replica_seed(cfg.seed, i));
    std::string text;
    path.for_each_state([&](double t, const PartitionOfN& pi) {
      json blocks = json::array();
      // Blocks are reported 1-based, block 1 holding element 1.
      for (auto b : pi.assignment()) blocks.push_back(b + 1);
      text += json{{"replica", i}, {"t", t}, {"block_of", blocks}}.dump();
      text += '\n';
    });
    return text;
  });
  for (auto& l : lines) rec.body += l;
  return rec;
}

inline json fiber_event_json(std::size_t replica, const FiberEvent& e) {
  json split = json::array();
  for (double m : e.split.masses()) split.push_back(m);
  return {{"replica", replica}, {"t", e.time}, {"split", split}, {"pick", e.pick}, {"kept", e.kept}};
}

inline ResultRecord run_subordinator(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const PhiEvaluator ev(*cfg.model);
  ResultRecord rec;
  rec.header = base_header(cfg, &ev);
  const double t_end = p.at("t_end").get<double>();
  const bool events = p.at("format").get<std::string>() == "events";
  rec.jsonl = events;
  auto parts = parallel_replicas(cfg.replicas, cfg.threads, [&](std::size_t i) {
    const auto log = fiber_event_log(*cfg.model, t_end, replica_seed(cfg.seed, i));
    std::string text;
    Csv csv;
    for (const auto& e : log.events) {
      if (events) {
        text += fiber_event_json(i, e).dump();
        text += '\n';
      } else {
        csv.row(i, e.time, -std::log(e.split[e.pick]));
      }
    }
    return events ? text : csv.text;
  });
  if (!events) rec.body = "replica,jump_time,jump_size\n";
  for (auto& s : parts) rec.body += s;
  return rec;
}

inline ResultRecord run_thin(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const double exponent = p.at("p").get<double>();
  const auto path = p.at("input").get<std::string>();
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot open '" + path + "'");
  json source_header;
  std::vector<std::pair<std::size_t, EventLog>> logs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::ConfigError, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("header")) {
      source_header = j.at("header");
      continue;
    }
    try {
      const auto replica = j.at("replica").get<std::size_t>();
      FiberEvent e{j.at("t").get<double>(), MassPartition::ranked(j.at("split").get<std::vector<double>>()),
                   j.at("pick").get<std::size_t>(), j.value("kept", true)};
      if (e.pick >= e.split.size()) fail(ErrorCode::ConfigError, "pick index out of range");
      if (logs.empty() || logs.back().first != replica) logs.push_back({replica, {}});
      auto& events = logs.back().second.events;
      if (!events.empty() && !(e.time > events.back().time))
        fail(ErrorCode::ConfigError, "event times must increase within a replica");
      events.push_back(std::move(e));
    } catch (const json::exception& e) {
      fail(ErrorCode::ConfigError, path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  ResultRecord rec;
  rec.jsonl = true;
  const std::optional<PhiEvaluator> ev =
      cfg.model ? std::optional<PhiEvaluator>(std::in_place, *cfg.model) : std::nullopt;
  rec.header = base_header(cfg, ev ? &*ev : nullptr);
  rec.header["source_header"] = source_header;
  std::size_t total = 0, kept = 0;
  for (auto& [replica, log] : logs) {
    Rng rng(derive_key(replica_seed(cfg.seed, replica), 0x7417));
    log = thin_fiber(std::move(log), exponent, rng);
    total += log.events.size();
    kept += log.kept_count();
    for (const auto& e : log.events) {
      rec.body += fiber_event_json(replica, e).dump();
      rec.body += '\n';
    }
  }
  rec.header["events_in"] = total;
  rec.header["events_kept"] = kept;
  if (source_header.contains("params") && source_header.at("params").contains("t_end") &&
      source_header.contains("replicas")) {
    const double exposure = source_header.at("params").at("t_end").get<double>() *
                            source_header.at("replicas").get<double>();
    if (exposure > 0.0) rec.header["kept_rate"] = static_cast<double>(kept) / exposure;
  }
  if (ev) rec.header["tilted_split_rate"] = tilted_split_rate(*ev, exponent);
  return rec;
}

inline ResultRecord run_martingale(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const PhiEvaluator ev(*cfg.model);
  ResultRecord rec;
  rec.header = base_header(cfg, &ev);
  const auto kind = p.at("kind").get<std::string>();
  ReplicaOptions ro;
  ro.t_grid = grid_of(p.at("t_grid"));
  ro.replicas = cfg.replicas;
  ro.seed = cfg.seed;
  ro.threads = cfg.threads;
  ro.epsilon_freeze = p.at("epsilon_freeze").get<double>();
  ro.population_cap = p.at("population_cap").get<std::size_t>();
  if (kind == "additive") ev.require_domain(p.at("p").get<double>());
  if (kind != "additive") ev.p_bar();
  if (kind == "truncated") ro.barrier_slope = ev.phi_derivs(ev.p_bar()).first;

  const std::size_t k = ro.t_grid.size();
  // Per replica and time: value, frozen mass, p_bar sensitivity.
  auto rows = replicate(*cfg.model, ro, [&](std::size_t, const std::vector<PopulationSnapshot>& snaps) {
    std::vector<double> r(3 * k);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& s = snaps[j];
      if (kind == "additive") r[j] = additive(s, ev, p.at("p").get<double>());
      else if (kind == "derivative") r[j] = derivative(s, ev);
      else r[j] = truncated_Ma(s, ev, p.at("a").get<double>());
      r[k + j] = s.frozen_mass;
      r[2 * k + j] = kind == "derivative" ? derivative_sensitivity(s, ev) : 0.0;
    }
    return r;
  });
  Csv csv;
  csv.row("t", "mean", "stderr", "frozen_mass_mean");
  json sensitivity = json::array();
  std::vector<double> col(rows.size());
  auto column = [&](std::size_t c) {
    for (std::size_t i = 0; i < rows.size(); ++i) col[i] = rows[i][c];
    return stats::mean_stderr(col);
  };
  for (std::size_t j = 0; j < k; ++j) {
    const auto v = column(j);
    const auto f = column(k + j);
    csv.row(ro.t_grid[j], v.mean, v.stderr_, f.mean);
    sensitivity.push_back(column(2 * k + j).mean);
  }
  if (kind == "derivative") rec.header["p_bar_sensitivity_1e-6"] = sensitivity;
  if (kind == "truncated") rec.header["barrier_slope"] = *ro.barrier_slope;
  rec.body = std::move(csv.text);
  return rec;
}

inline ResultRecord run_spine(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const PhiEvaluator ev(*cfg.model);
  ResultRecord rec;
  rec.header = base_header(cfg, &ev);
  SpineOptions so;
  so.p = p.at("p").get<double>();
  so.t_end = p.at("t_end").get<double>();
  so.epsilon_freeze = p.at("epsilon_freeze").get<double>();
  so.with_population = p.at("with_population").get<bool>();
  rec.header["tilted_split_rate"] = tilted_split_rate(ev, so.p);
  auto parts = parallel_replicas(cfg.replicas, cfg.threads, [&](std::size_t i) {
    SpineOptions o = so;
    o.seed = replica_seed(cfg.seed, i);
    const auto run = simulate_spine(ev, o);
    Csv csv;
    double log_mass = 0.0;
    for (const auto& sp : run.spine_split_log) {
      log_mass += std::log(sp.split[sp.chosen]);
      csv.row(i, "split", sp.time, log_mass, sp.chosen, sp.weight);
    }
    if (run.population)
      for (double l : *run.population) csv.row(i, "live", so.t_end, l, "", run.weight);
    return csv.text;
  });
  rec.body = "replica,record,time,log_mass,chosen,weight\n";
  for (auto& s : parts) rec.body += s;
  return rec;
}

inline ResultRecord run_ldp(const RunConfig& cfg) {
  const auto& p = cfg.params;
  const PhiEvaluator ev(*cfg.model);
  ResultRecord rec;
  rec.header = base_header(cfg, &ev);
  PresenceQuery q;
  q.p = p.at("p").get<double>();
  q.alpha = p.at("alpha").get<double>();
  q.beta = p.at("beta").get<double>();
  if (p.contains("x_override")) q.x_override = p.at("x_override").get<double>();
  const auto grid = grid_of(p.at("t_grid"));
  LdpOptions lo;
  lo.replicas = cfg.replicas;
  lo.seed = cfg.seed;
  lo.threads = cfg.threads;
  lo.epsilon_freeze = p.at("epsilon_freeze").get<double>();
  lo.population_cap = p.at("population_cap").get<std::size_t>();
  const auto estimator = p.at("estimator").get<std::string>();
  ev.require_domain(q.p);

  Csv csv;
  if (estimator == "ratio") {
    const auto tr = ratio_trace(*cfg.model, ev, q, grid, lo, p.at("bootstrap").get<std::size_t>());
    rec.warnings = tr.warnings;
    csv.row("t", "x", "ratio", "ratio_lo95", "ratio_hi95", "U", "U_stderr", "V", "V_stderr");
    for (const auto& pt : tr.points)
      csv.row(pt.t, presence_x(ev, q, pt.t), pt.ratio, pt.ci_lo, pt.ci_hi, pt.U.mean,
              pt.U.stderr_, pt.V.mean, pt.V.stderr_);
    rec.header["last_slope"] = finite_or_string(tr.last_slope);
    rec.header["last_slope_lo95"] = finite_or_string(tr.slope_lo);
    rec.header["last_slope_hi95"] = finite_or_string(tr.slope_hi);
    rec.header["stabilized"] = tr.stabilized;
  } else {
    rec.warnings = presence_warnings(ev, q, grid, lo.epsilon_freeze, false);
    auto asymptote = [&](double t) {
      if (q.x_override || !(t > 0.0) || !(q.p < ev.p_bar())) return std::numeric_limits<double>::quiet_NaN();
      return v_asymptote(ev, q.p, t, q.alpha, q.beta);
    };
    auto cells = [](const Estimate& e) {
      return std::array<double, 4>{e.mean, e.stderr_, e.lo95(), e.hi95()};
    };
    if (estimator == "manyto1") {
      const auto m1 = estimate_V_manyto1(*cfg.model, ev, q, grid, lo);
      csv.row("t", "x", "V_manyto1", "V_manyto1_stderr", "V_manyto1_lo95", "V_manyto1_hi95",
              "v_asymptote");
      for (std::size_t j = 0; j < grid.size(); ++j) {
        const auto c = cells(m1[j]);
        csv.row(grid[j], presence_x(ev, q, grid[j]), c[0], c[1], c[2], c[3], asymptote(grid[j]));
      }
    } else if (estimator == "both") {
      const auto est = estimate_presence(*cfg.model, ev, q, grid, lo);
      csv.row("t", "x", "V_direct", "V_direct_stderr", "V_direct_lo95", "V_direct_hi95", "V_manyto1",
              "V_manyto1_stderr", "V_manyto1_lo95", "V_manyto1_hi95", "U", "U_stderr",
              "overlap95", "v_asymptote", "frozen_mass_mean");
      for (const auto& e : est) {
        const auto d = cells(e.V_direct);
        const auto m = cells(e.V_manyto1);
        csv.row(e.t, e.x, d[0], d[1], d[2], d[3], m[0], m[1], m[2], m[3], e.U_direct.mean,
                e.U_direct.stderr_, e.V_direct.overlaps95(e.V_manyto1) ? 1 : 0, asymptote(e.t),
                e.frozen_mass_mean);
      }
    } else {
      const auto pc = presence_counts(*cfg.model, ev, q, grid, lo);
      const bool u = estimator == "u";
      const std::string name = u ? "U" : "V_direct";
      csv.row("t", "x", name, name + "_stderr", name + "_lo95", name + "_hi95", "v_asymptote",
              "frozen_mass_mean");
      for (std::size_t j = 0; j < grid.size(); ++j) {
        const auto c = cells(u ? U_from_counts(pc, j) : V_from_counts(pc, j));
        csv.row(grid[j], pc.x[j], c[0], c[1], c[2], c[3],
                u ? std::numeric_limits<double>::quiet_NaN() : asymptote(grid[j]),
                pc.frozen_mass_mean[j]);
      }
    }
  }
  rec.header["warnings"] = warnings_json(rec.warnings);
  rec.body = std::move(csv.text);
  return rec;
}

}  // namespace detail

/// Dispatches a validated configuration. Module errors propagate as
/// fragsim::Error, annotated with the replica index when raised in one.
inline ResultRecord run(const RunConfig& cfg) {
  if (cfg.command == "phi") return detail::run_phi(cfg);
  if (cfg.command == "simulate") return detail::run_simulate(cfg);
  if (cfg.command == "partition") return detail::run_partition(cfg);
  if (cfg.command == "subordinator") return detail::run_subordinator(cfg);
  if (cfg.command == "martingale") return detail::run_martingale(cfg);
  if (cfg.command == "spine") return detail::run_spine(cfg);
  if (cfg.command == "thin") return detail::run_thin(cfg);
  if (cfg.command == "ldp") return detail::run_ldp(cfg);
  fail(ErrorCode::ConfigError, "unknown command '" + cfg.command + "'");
}

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBudget = 3;
inline constexpr int kExitStrictWarning = 4;

inline int exit_code_for(ErrorCode c) {
  return c == ErrorCode::BudgetExceeded ? kExitBudget : kExitConfig;
}

}  // namespace fragsim::cli
