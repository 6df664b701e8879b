#pragma once

#include "lcbs/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

namespace lcbs {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr const char *kOutputRootEnv = "LCBS_OUTPUT_ROOT";

/// <$LCBS_OUTPUT_ROOT or ./lcbs-output>/<experiment>
inline std::filesystem::path default_output_dir(const std::string &experiment) {
  const char *root = std::getenv(kOutputRootEnv);
  const std::filesystem::path base =
      root && *root ? std::filesystem::path(root) : std::filesystem::path("lcbs-output");
  return base / experiment;
}

namespace detail {

/// Picks the experiment from --experiment or the config's `experiment` key.
inline const ExperimentInfo &select_experiment(const std::string &flag, const RawConfig &raw) {
  if (!flag.empty()) {
    return find_experiment(flag);
  }
  const auto it = raw.find("experiment");
  if (it == raw.end()) {
    throw ConfigError("no experiment given: pass --experiment or set the 'experiment' key");
  }
  return find_experiment(it->second);
}

inline Config load_config(const std::string &experiment, const std::string &path,
                          std::optional<long long> seed, const ExperimentInfo *&info) {
  const RawConfig raw = path.empty() ? RawConfig{} : read_config_file(path);
  info = &select_experiment(experiment, raw);
  Config c = resolve_experiment_config(*info, raw);
  if (seed) {
    c.set("seed", std::to_string(*seed));
  }
  return c;
}

} // namespace detail

/// Subcommands: run, list, validate. Exit 0 on success, 2 on usage or
/// config errors, 3 when more than half the runs diverged, 1 otherwise.
inline int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout,
                   std::ostream &err = std::cerr) {
  CLI::App app{"Localized consensus-based sampling experiments", "lcbs"};
  app.require_subcommand(1);

  std::string experiment, config_path, out_dir;
  std::optional<long long> seed;

  auto *run_cmd = app.add_subcommand("run", "run an experiment and write its artifacts");
  run_cmd->add_option("--experiment,-e", experiment, "experiment name (see `list`)");
  run_cmd->add_option("--config,-c", config_path, "config file (key = value)");
  run_cmd->add_option("--out,-o", out_dir,
                      "output directory (default $LCBS_OUTPUT_ROOT/<experiment>)");
  run_cmd->add_option("--seed,-s", seed, "override the config seed");

  auto *list_cmd = app.add_subcommand("list", "print the experiment names");
  bool verbose = false;
  list_cmd->add_flag("--verbose,-v", verbose, "also print descriptions and config keys");

  auto *validate_cmd = app.add_subcommand("validate", "check a config without running");
  validate_cmd->add_option("--experiment,-e", experiment, "experiment name");
  validate_cmd->add_option("--config,-c", config_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp &e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (list_cmd->parsed()) {
      for (const auto &e : experiments()) {
        out << e.name << '\n';
        if (verbose) {
          out << "  " << e.description << '\n';
          for (const auto &k : e.schema()) {
            out << "    " << k.name << " = " << k.default_value << "  (" << k.doc << ")\n";
          }
        }
      }
      return kExitOk;
    }
    const ExperimentInfo *info = nullptr;
    const Config c = detail::load_config(experiment, config_path, seed, info);
    if (validate_cmd->parsed()) {
      out << "config is valid for experiment '" << info->name << "'\n";
      return kExitOk;
    }
    const std::filesystem::path dir =
        out_dir.empty() ? default_output_dir(info->name) : std::filesystem::path(out_dir);
    Artifacts a;
    int code = kExitOk;
    try {
      a = run_experiment(info->name, c);
    } catch (const AllRunsDiverged &e) {
      err << "error: " << e.what() << '\n';
      return kExitDiverged;
    }
    write_artifacts(a, dir);
    for (const auto &w : a.warnings) {
      err << "warning: " << w << '\n';
    }
    out << "wrote " << dir.string() << " (" << a.total_runs() << " runs, "
        << a.diverged_runs() << " diverged)\n";
    if (a.divergence_dominated()) {
      err << "error: more than half of the runs diverged\n";
      code = kExitDiverged;
    }
    return code;
  } catch (const UsageError &e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

} // namespace lcbs
