#pragma once

#include <string>
#include <vector>

#include "dynlate/estimator.hpp"
#include "dynlate/scm_sim.hpp"

namespace dynlate {

struct EstimandSpecCfg {
  enum class Kind {
    when_to_treat,
    mixture,
    always_treat_staggered,
    always_treat_strong,
    always_treat_general_2p,
    counterfactual_mean,
    compliance_prob,
  };
  Kind kind = Kind::when_to_treat;
  int t_star = 1;
  std::vector<int> z, d;

  std::string name(int T) const;
};

struct ExperimentConfig {
  LogisticLinearScm scm;
  long n = 5000;
  int replications = 100;
  std::vector<EstimandSpecCfg> estimands;
  EstimatorConfig estimator;
  std::uint64_t base_seed = 1;
  long n_mc_truth = 100000;  // invariant: >= 1e5
  int parallelism = 1;

  void check() const;  // throws ConfigError
};

struct EstimandSummary {
  std::string estimand;
  double rmse = 0.0;
  double bias = 0.0;
  double coverage = 0.0;  // NaN for point-only estimands
  double mean_ci_width = 0.0;
  double truth = 0.0;
  double truth_se = 0.0;
  int failures = 0;
  int r_effective = 0;
};

struct ReplicationFailure {
  int replication = 0;
  std::string estimand;
  std::string message;
};

struct McSummary {
  long n = 0;
  int p = 0;
  int T = 0;
  int replications = 0;
  std::uint64_t base_seed = 0;
  std::vector<EstimandSummary> rows;
  std::vector<ReplicationFailure> failures;
};

// Aggregates one estimand's replication reports against a truth value.
EstimandSummary summarize(const std::vector<EstimateReport>& estimates, double truth);

// Runs the full simulate -> estimate loop. The truth for each estimand is
// computed once from counterfactual rollouts; replication r draws seed
// base_seed ^ r. Estimator failures are counted and excluded from the
// aggregates; run_mc throws only if every replication of an estimand fails.
McSummary run_mc(const ExperimentConfig& config);

// Table CSV (columns n,p,estimand,rmse,bias,coverage) and a JSON sidecar
// with truths, seeds and failure logs. Timestamps live only in the sidecar
// metadata block.
std::string mc_summary_csv(const McSummary& summary);
std::string mc_summary_sidecar_json(const McSummary& summary, bool with_timestamp = true);

}  // namespace dynlate
