#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "dynlate/mc_harness.hpp"

namespace dynlate {

struct SimulateConfig {
  LogisticLinearScm scm;
  long n = 1000;
  std::uint64_t seed = 1;
};

struct EstimateCommandConfig {
  std::vector<EstimandSpecCfg> estimands;
  EstimatorConfig estimator;
  bool require_one_sided = true;
  std::string data_path;  // may be overridden by --data
};

// Single structured config file with one section per command. Unknown keys
// are rejected. Defaults: K=5 folds, clip [0.01, 1], level 0.95.
struct CliConfig {
  int schema_version = 1;
  std::optional<SimulateConfig> simulate;
  std::optional<EstimateCommandConfig> estimate;
  std::optional<ExperimentConfig> mc;
};

CliConfig parse_cli_config(const std::string& json_text);
CliConfig load_cli_config(const std::string& path);

// Self-contained verification suite: identification identities on random
// one-sided SCMs, the mixture identity, both nonidentifiability witnesses
// and the conditional-independence checks. Prints one PASS/FAIL line per
// item and returns true when everything passed.
bool run_verification(std::ostream& out, int n_random_scms, std::uint64_t seed);

}  // namespace dynlate
