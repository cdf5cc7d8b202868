// fragsim: command-line front end. Flags override fields of --config; the
// merged document is validated as a whole so every problem is reported.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fragsim/cli.hpp"

namespace {

using fragsim::cli::json;

std::string flag_name(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  namespace fc = fragsim::cli;
  CLI::App app{"Homogeneous fragmentation simulator"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::optional<std::string> config_path, model, out;
  std::optional<std::uint64_t> seed;
  std::optional<long long> replicas, threads;
  bool strict = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--model", model, "model: uniform_binary, dyadic, inline JSON, or a JSON file");
  app.add_option("--seed", seed, "master seed (required)");
  app.add_option("--replicas", replicas, "replica count");
  app.add_option("--threads", threads, "worker threads (does not change results)");
  app.add_option("--out", out, "output file (default stdout)");
  app.add_flag("--strict", strict, "exit with status 4 when a regime warning is raised");

  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, std::map<std::string, bool>> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : fc::commands()) {
    auto* sub = app.add_subcommand(name);
    subs[name] = sub;
    for (const auto& spec : fc::param_schema(name)) {
      if (spec.type == fc::ParamType::Bool) {
        flags[name][spec.key] = false;
        sub->add_flag(flag_name(spec.key), flags[name][spec.key], spec.help);
      } else {
        auto* opt = sub->add_option(flag_name(spec.key), raw[name][spec.key], spec.help);
        if (!spec.choices.empty()) opt->check(CLI::IsMember(spec.choices));
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? fc::kExitOk : fc::kExitConfig;
  }

  std::vector<fragsim::ConfigIssue> issues;
  json doc = json::object();
  try {
    if (config_path) doc = fc::load_json_file(*config_path);
    if (!doc.is_object()) fragsim::fail(fragsim::ErrorCode::ConfigError, "configuration must be an object");
    if (model) doc["model"] = fc::model_argument(*model);
  } catch (const fragsim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fc::kExitConfig;
  }
  if (seed) doc["seed"] = *seed;
  if (replicas) doc["replicas"] = *replicas;
  if (threads) doc["threads"] = *threads;
  if (out) doc["out"] = *out;
  if (strict) doc["strict"] = true;

  std::string command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command = name;
  if (!command.empty()) {
    if (doc.contains("command") && doc["command"] != command) {
      std::cerr << "error: --config names command " << doc["command"] << " but '" << command
                << "' was given\n";
      return fc::kExitConfig;
    }
    doc["command"] = command;
    if (!doc.contains("params")) doc["params"] = json::object();
    for (const auto& spec : fc::param_schema(command)) {
      const auto* opt = subs[command]->get_option(flag_name(spec.key));
      if (opt->count() == 0) continue;
      if (spec.type == fc::ParamType::Bool) {
        doc["params"][spec.key] = flags[command][spec.key];
      } else if (auto v = fc::param_from_string(spec, raw[command][spec.key], issues)) {
        doc["params"][spec.key] = *v;
      }
    }
  }

  auto parsed = fc::parse_config(doc);
  issues.insert(issues.end(), parsed.issues.begin(), parsed.issues.end());
  if (!issues.empty()) {
    for (const auto& i : issues) std::cerr << "error: " << fragsim::describe(i) << "\n";
    return fc::kExitConfig;
  }
  const auto& cfg = *parsed.config;

  fc::ResultRecord rec;
  try {
    rec = fc::run(cfg);
  } catch (const fragsim::Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return fc::exit_code_for(e.code());
  }

  const auto text = rec.text();
  if (cfg.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(cfg.out, std::ios::binary);
    if (!f) {
      std::cerr << "error: cannot write '" << cfg.out << "'\n";
      return fc::kExitConfig;
    }
    f << text;
  }
  for (const auto& w : rec.warnings)
    std::cerr << "warning: " << to_string(w.code) << ": " << w.message << "\n";
  if (cfg.strict && !rec.warnings.empty()) return fc::kExitStrictWarning;
  return fc::kExitOk;
}
