#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dynlate/nuisance.hpp"
#include "dynlate/panel.hpp"

namespace dynlate {

double normal_quantile(double p);  // standard normal inverse CDF

struct EstimatorConfig {
  LearnerSpec regression;      // l1_linear by default
  LearnerSpec classification;  // l2-penalized logistic by default
  int folds = 5;
  std::uint64_t seed = 1;
  double confidence_level = 0.95;
  double denom_floor = 0.01;
  bool erm_riesz = false;  // ERM Riesz representers instead of plug-in

  EstimatorConfig() {
    regression.family = LearnerFamily::l1_linear;
    classification.family = LearnerFamily::l2_logistic;
  }
};

struct EstimateReport {
  std::string estimand;
  double point = 0.0;
  double std_error = 0.0;  // sigma-hat; the CI uses std_error / sqrt(n)
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  long n = 0;
  double denominator = 0.0;  // compliance mass (1 for plain means)
  std::vector<double> fold_numerator_means;
  std::vector<std::string> flags;

  bool has_ci() const { return std::isfinite(std_error); }
};

std::string report_to_json(const EstimateReport& report);

// Moment composers over per-row nuisance values. `f` and `a` hold the T
// level values; the correction terms telescope against the next level with
// the outcome (or event indicator) closing the sum.
double phi_from_values(const Eigen::Ref<const Eigen::VectorXd>& f,
                       const Eigen::Ref<const Eigen::VectorXd>& a, double y);
double psi_from_values(const Eigen::Ref<const Eigen::VectorXd>& g,
                       const Eigen::Ref<const Eigen::VectorXd>& a, double indicator);
// f_d1 holds the f^{D_1*1} values for levels 2..T; gamma the staggered
// representer values for levels 1..T.
double rho_from_values(double q, const Eigen::Ref<const Eigen::VectorXd>& f_d1,
                       const Eigen::Ref<const Eigen::VectorXd>& gamma, double y);
double pi_from_values(double p, double a1, double d1);

// Caches cross-fitted nuisances for one dataset so that several estimands
// reuse the all-zeros arm, the propensities and any shared treatment models.
class EstimationContext {
 public:
  EstimationContext(const PanelDataset& ds, EstimatorConfig cfg);

  const PanelDesign& design() const { return design_; }
  const CrossFitPlan& plan() const { return plan_; }
  const EstimatorConfig& config() const { return cfg_; }

  const PropensityModels& propensities();
  const NestedModels& outcome_models(const std::vector<int>& z);
  const NestedModels& treatment_models(const std::vector<int>& z, const TerminalTarget& event);
  const StaggeredNuisances& staggered_nuisances();

  // Out-of-fold representer values for a fixed arm (plug-in or ERM per
  // config) and for the staggered row-dependent arm (always plug-in).
  const Eigen::MatrixXd& riesz_values(const std::vector<int>& z);
  const Eigen::MatrixXd& staggered_gamma();

  Eigen::VectorXd phi_values(const std::vector<int>& z);
  Eigen::VectorXd psi_values(const std::vector<int>& z, const TerminalTarget& event);
  // (rho, pi) for the staggered always-treat moment.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> rho_pi_values();

  double weighted_mean(const Eigen::VectorXd& v) const;
  std::vector<double> fold_means(const Eigen::VectorXd& v) const;
  std::vector<std::vector<int>> fitted_outcome_arms() const;

 private:
  EstimatorConfig cfg_;
  PanelDesign design_;
  CrossFitPlan plan_;
  std::optional<PropensityModels> props_;
  std::optional<StaggeredNuisances> staggered_;
  std::map<std::string, NestedModels> outcome_cache_;
  std::map<std::string, NestedModels> treatment_cache_;
  std::map<std::string, Eigen::MatrixXd> riesz_cache_;
  std::map<std::string, RieszModels> erm_cache_;
  std::optional<Eigen::MatrixXd> gamma_;
};

// phi_z for one (possibly new) trajectory, with fold-averaged nuisance
// predictions. Rows of the fitted dataset get their out-of-fold values via
// phi_values instead.
double moment_phi(EstimationContext& ctx, const Trajectory& tr, const std::vector<int>& z);

EstimateReport estimate_counterfactual_mean(EstimationContext& ctx, const std::vector<int>& z);
EstimateReport estimate_compliance_prob(EstimationContext& ctx, const std::vector<int>& z,
                                        const std::vector<int>& d);
EstimateReport estimate_when_to_treat(EstimationContext& ctx, int t_star);
EstimateReport estimate_mixture_beta(EstimationContext& ctx, const std::vector<int>& z);
// Plug-in combination under the strong cross-group homogeneity restriction;
// the standard error comes from the delta method over the per-row influence
// values of every input estimate.
EstimateReport estimate_always_treat_strong(EstimationContext& ctx);
EstimateReport estimate_always_treat_staggered(EstimationContext& ctx);
// Point estimate only (no CI).
double estimate_always_treat_general_2p(EstimationContext& ctx);

struct ConditionalLateSpec {
  enum class Kind { when_to_treat, always_treat_staggered };
  Kind kind = Kind::when_to_treat;
  int t_star = 1;
};

// Heterogeneous LATE at an initial state s0: ratio of first-level nuisance
// predictions averaged across folds. Throws EstimabilityError when the
// predicted compliance at s0 falls below the floor.
double conditional_late(EstimationContext& ctx, const Eigen::VectorXd& s0,
                        const ConditionalLateSpec& spec);

// Convenience wrappers building a fresh context.
EstimateReport estimate_when_to_treat(const PanelDataset& ds, const EstimatorConfig& cfg,
                                      int t_star);
EstimateReport estimate_always_treat_staggered(const PanelDataset& ds,
                                               const EstimatorConfig& cfg);

// Per-row audit table of every arm fitted so far in this context: fold id,
// out-of-fold nested outcome values, representer values and the resulting
// phi. One block of rows per arm, tagged by the arm column.
std::string nuisance_audit_csv(EstimationContext& ctx);

}  // namespace dynlate
