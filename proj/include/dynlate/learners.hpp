#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "dynlate/errors.hpp"

namespace dynlate {

enum class LearnerFamily { l1_linear, l2_logistic, boosted_stumps, saturated };
enum class TaskKind { regress, classify };

struct LearnerSpec {
  LearnerFamily family = LearnerFamily::l1_linear;
  int penalty_grid = 20;            // log-spaced grid size
  double penalty_min_ratio = 1e-4;  // lambda_min = ratio * lambda_max
  int cv_folds = 5;                 // folds for penalty selection
  std::optional<double> fixed_penalty;
  // boosting
  int max_boost_rounds = 500;
  double shrinkage = 0.1;
  int early_stopping_patience = 10;
  // propensity clipping (applied where predictions enter denominators)
  double clip_lo = 0.01;
  double clip_hi = 1.0;

  void check() const;  // throws ConfigError on bad bounds / empty grid
};

struct ConstantModel {
  double value = 0.0;
};

struct LinearModel {
  Eigen::VectorXd coef;  // raw feature scale
  double intercept = 0.0;
  bool logistic_link = false;
};

// Cell-mean lookup over exact feature tuples; the indicator-saturated
// learner used on finite discrete designs.
struct SaturatedModel {
  std::unordered_map<std::string, double> cell_means;
  double fallback = 0.0;
};

struct Stump {
  int feature = 0;
  double threshold = 0.0;
  double left = 0.0;  // leaf values with shrinkage folded in
  double right = 0.0;
};

struct StumpEnsemble {
  double base = 0.0;
  std::vector<Stump> stumps;
  bool logistic_link = false;
};

struct FittedModel {
  std::variant<ConstantModel, LinearModel, SaturatedModel, StumpEnsemble> impl;
  TaskKind task = TaskKind::regress;
  double chosen_penalty = 0.0;
  int rounds = 0;  // boosting rounds kept
};

double predict_one(const FittedModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd predict(const FittedModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X);

inline double clip_propensity(double value, const LearnerSpec& spec) {
  return std::min(std::max(value, spec.clip_lo), spec.clip_hi);
}

// Fits one model. Regression tasks use the lasso for l1_linear (coordinate
// descent, coordinate-change tolerance 1e-7); classification tasks use
// l2-penalized logistic regression (damped Newton to gradient norm 1e-8).
// The penalty is chosen by cross-validation on a 20-point log grid unless
// spec.fixed_penalty is set. Constant targets yield a constant predictor.
// Weighted fits are supported by the saturated family only.
FittedModel fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& y, TaskKind task,
                        const Eigen::VectorXd& weights = Eigen::VectorXd());

std::string feature_key(const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace dynlate
