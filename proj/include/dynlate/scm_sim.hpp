#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dynlate/panel.hpp"
#include "dynlate/rng.hpp"

namespace dynlate {

enum class DgpVariant { when_to_treat_dgp, staggered_dgp };

// Logistic-linear structural model:
//   U    ~ clip(N(0,1), -2, 2)
//   S_0  ~ N(0, I_p)
//   Z_t  ~ Bernoulli(Logistic(S_{t-1}[0]))
//   D_t  ~ Z_t * Bernoulli(Logistic(2 Z_t - 1 + U))          (when-to-treat)
//   D_t  ~ 1(D_1=1) Z_t + 1(D_1=0) Z_t * Bern(...)  for t>=2 (staggered)
//   S_t  ~ 0.5 S_{t-1} + D_{t-1} + U + N(0, I_p)     with D_0 = 0
//   Y    ~ c_d * D_T + S_{T-1}[k] + U + N(0, 1)
// where c_d = outcome_treatment_coef and k = outcome_state_index.
struct LogisticLinearScm {
  int T = 2;
  int p = 10;
  DgpVariant variant = DgpVariant::when_to_treat_dgp;
  double outcome_treatment_coef = 1.0;
  int outcome_state_index = 0;
};

void check_scm(const LogisticLinearScm& scm);  // throws ConfigError

double logistic(double x);

// Deterministic mapping from history prefix to an encouragement bit. The
// prefix trajectory carries z_1..z_{t-1}, d_1..d_{t-1} and S_0..S_{t-1}.
struct EncouragementPolicy {
  std::function<int(int t, const Trajectory& prefix)> decide;

  static EncouragementPolicy constant(int z);
  // Z_1 = 1, then Z_t = D_1: keeps encouraging exactly the units that
  // complied in the first period.
  static EncouragementPolicy first_period_complier();
};

struct InterventionSpec {
  enum class Kind { fix_instruments, fix_treatments, policy };
  Kind kind = Kind::fix_instruments;
  std::vector<int> bits;  // length T for fix_* kinds
  EncouragementPolicy pol;
  std::string tag;

  static InterventionSpec fix_instruments(std::vector<int> z, std::string tag = "z");
  static InterventionSpec fix_treatments(std::vector<int> d, std::string tag = "d");
  static InterventionSpec policy(EncouragementPolicy pol, std::string tag = "pi");
};

struct InterventionOutcome {
  std::string tag;
  std::vector<int> z;  // realized encouragements
  std::vector<int> d;  // realized treatments
  double y = 0.0;
  bool complied_all = false;  // d == z entrywise
};

// Per-unit record across a set of interventions sharing one exogenous draw.
struct CounterfactualDraw {
  double u = 0.0;
  Eigen::VectorXd s0;
  std::vector<InterventionOutcome> outcomes;
};

// n i.i.d. trajectories; bit-identical output for identical (scm, n, seed)
// regardless of how callers parallelize, because unit i consumes only the
// substream (seed, i).
PanelDataset simulate(const LogisticLinearScm& scm, long n, std::uint64_t seed);

std::vector<CounterfactualDraw> rollout_counterfactual(const LogisticLinearScm& scm, long n,
                                                       std::uint64_t seed,
                                                       const std::vector<InterventionSpec>& specs);

// Columns: u, then per intervention tag: y_cf_<tag>, d_cf_<tag>_1..T.
void write_rollout_csv(const std::vector<CounterfactualDraw>& draws, int T, std::ostream& out);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;  // Monte Carlo standard error of `value`
  double event_prob = 0.0;
  long n_event = 0;
};

// E[Y(d) - Y(0) | D(z)=d] by counterfactual rollout with common random
// numbers; also reports the Pr(D(z)=d) estimate. Throws EstimabilityError
// when no unit lands in the conditioning event.
McEstimate true_late_mc(const LogisticLinearScm& scm, const std::vector<int>& z,
                        const std::vector<int>& d, long n_mc, std::uint64_t seed);

// E[Y(D(z)) - Y(0) | D(z) != 0].
McEstimate true_mixture_mc(const LogisticLinearScm& scm, const std::vector<int>& z, long n_mc,
                           std::uint64_t seed);

// E[Y(D(z))]; event_prob is 1.
McEstimate true_counterfactual_mean_mc(const LogisticLinearScm& scm, const std::vector<int>& z,
                                       long n_mc, std::uint64_t seed);

// Pr(D(z) = d); value and event_prob coincide.
McEstimate true_compliance_prob_mc(const LogisticLinearScm& scm, const std::vector<int>& z,
                                   const std::vector<int>& d, long n_mc, std::uint64_t seed);

}  // namespace dynlate
