#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "dynlate/learners.hpp"
#include "dynlate/panel.hpp"

namespace dynlate {

// Row -> fold assignment for cross-fitting. K=1 disables splitting: the
// single fold trains on every row (used when a dataset encodes an exact law).
struct CrossFitPlan {
  int K = 5;
  std::vector<int> fold_of_row;

  static CrossFitPlan make(long n, int K, std::uint64_t seed);
  bool in_training(long row, int fold) const {
    return K == 1 || fold_of_row[row] != fold;
  }
};

// Precomputed design matrices: history[t-1] holds the H_t features of every
// row, plus the z/d paths and outcome as dense arrays.
struct PanelDesign {
  int T = 0;
  int p = 0;
  long n = 0;
  std::vector<Eigen::MatrixXd> history;
  Eigen::MatrixXd z;  // n x T
  Eigen::MatrixXd d;  // n x T
  Eigen::VectorXd y;
  Eigen::VectorXd weights;  // size 0 when unweighted

  static PanelDesign build(const PanelDataset& ds);
  double weight(long i) const { return weights.size() > 0 ? weights[i] : 1.0; }
  double total_weight() const {
    return weights.size() > 0 ? weights.sum() : static_cast<double>(n);
  }
};

// Which instrument value each period's subsample fit conditions on. An entry
// of -1 means "the row's own D_1" (the staggered evaluation arm).
struct ArmRule {
  std::vector<int> required;

  static ArmRule fixed(const std::vector<int>& z_bits) { return {z_bits}; }
  static ArmRule staggered(int T) {
    ArmRule rule;
    rule.required.assign(T, -1);
    rule.required[0] = 1;
    return rule;
  }
  int value(const PanelDesign& design, long row, int t) const {
    const int bit = required[t - 1];
    return bit >= 0 ? bit : static_cast<int>(design.d(row, 0));
  }
};

struct TerminalTarget {
  enum class Kind { outcome, event_equals, event_not_zero };
  Kind kind = Kind::outcome;
  std::vector<int> d_bits;

  static TerminalTarget outcome() { return {Kind::outcome, {}}; }
  static TerminalTarget event(std::vector<int> d) { return {Kind::event_equals, std::move(d)}; }
  static TerminalTarget event_not_zero() { return {Kind::event_not_zero, {}}; }

  Eigen::VectorXd values(const PanelDesign& design) const;
  bool is_classification() const { return kind != Kind::outcome; }
};

// Backward-recursive nested regressions, fit per fold on the arm subsample
// {Z_t = arm_t}. values(i, t-1) is row i's out-of-fold prediction at level t;
// levels below `bottom_level` stay zero.
struct NestedModels {
  int bottom_level = 1;
  std::vector<std::vector<FittedModel>> model;  // [fold][t-1]
  Eigen::MatrixXd values;                       // n x T
};

NestedModels fit_nested(const PanelDesign& design, const CrossFitPlan& plan, const ArmRule& arm,
                        int bottom_level, const TerminalTarget& target,
                        const LearnerSpec& regression, const LearnerSpec& classification);

// Spec-facing wrappers.
NestedModels fit_nested_outcome(const PanelDesign& design, const CrossFitPlan& plan,
                                const std::vector<int>& z, const LearnerSpec& regression,
                                const LearnerSpec& classification);
NestedModels fit_nested_treatment(const PanelDesign& design, const CrossFitPlan& plan,
                                  const std::vector<int>& z, const TerminalTarget& event,
                                  const LearnerSpec& regression,
                                  const LearnerSpec& classification);

// Instrument propensities Pr(Z_t=1 | H_t), fit per fold on all training rows.
struct PropensityModels {
  std::vector<std::vector<FittedModel>> model;  // [fold][t-1]
  Eigen::MatrixXd prob1;                        // n x T, out-of-fold
};

PropensityModels fit_propensities(const PanelDesign& design, const CrossFitPlan& plan,
                                  const LearnerSpec& classification);

// Plug-in Riesz weights a_t = a_{t-1} * 1{Z_t = arm_t} / clip(P(Z_t = arm_t | H_t)),
// evaluated out-of-fold for every row; clipping per spec.clip_lo/hi.
Eigen::MatrixXd plugin_riesz_values(const PanelDesign& design, const PropensityModels& props,
                                    const ArmRule& arm, const LearnerSpec& clip_spec);

// Same product for one trajectory, using the given fold's propensity models.
Eigen::VectorXd riesz_weights_plugin(const PropensityModels& props, int fold,
                                     const Trajectory& tr, const std::vector<int>& z,
                                     const LearnerSpec& clip_spec);

// Linear Riesz representers fit by empirical risk minimization of
// E[a(H_t,Z_t)^2 - 2 a_{t-1}(H_{t-1},Z_{t-1}) a(H_t, z_t)] with an l2
// penalty chosen by cross-validation on the same loss.
struct RieszLevelModel {
  Eigen::VectorXd coef;  // over [H_t features..., Z_t]
  double intercept = 0.0;
  double penalty = 0.0;

  double value(const Eigen::Ref<const Eigen::VectorXd>& h, double z_value) const;
};

struct RieszModels {
  std::vector<std::vector<RieszLevelModel>> model;  // [fold][t-1]
  Eigen::MatrixXd values;                           // n x T, out-of-fold at observed (H_t, Z_t)
};

RieszModels fit_riesz_erm(const PanelDesign& design, const CrossFitPlan& plan,
                          const std::vector<int>& z, const LearnerSpec& spec);

// Single regression of a target on H_1 within {Z_1 = 1}.
struct FirstPeriodModels {
  std::vector<FittedModel> model;  // per fold
  Eigen::VectorXd values;          // out-of-fold predictions
};

// Staggered-compliance nuisances: the f^{D_1*1} nested outcome stack
// (levels 2..T, arm Z_t = D_1), q = E[f_2(H_2, D_1) | H_1, Z_1=1] and
// p = E[D_1 | H_1, Z_1=1].
struct StaggeredNuisances {
  NestedModels f_d1;
  FirstPeriodModels q;
  FirstPeriodModels p;
};

StaggeredNuisances fit_staggered_nuisances(const PanelDesign& design, const CrossFitPlan& plan,
                                           const LearnerSpec& regression,
                                           const LearnerSpec& classification);

}  // namespace dynlate
