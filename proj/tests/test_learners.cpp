#include <cmath>

#include "doctest.h"
#include "dynlate/learners.hpp"
#include "dynlate/rng.hpp"
#include "dynlate/scm_sim.hpp"

using namespace dynlate;

namespace {

Eigen::MatrixXd random_design(Rng& rng, int n, int p) {
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

double r_squared(const Eigen::VectorXd& fitted, const Eigen::VectorXd& y) {
  const double ss_res = (y - fitted).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

TEST_CASE("lasso recovers a noiseless linear signal") {
  Rng rng(1);
  const Eigen::MatrixXd X = random_design(rng, 400, 8);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(8);
  beta << 1.5, -2.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0;
  const Eigen::VectorXd y = (X * beta).array() + 0.7;
  LearnerSpec spec;
  const FittedModel model = fit_learner(spec, X, y, TaskKind::regress);
  CHECK(r_squared(predict(model, X), y) >= 0.999);
}

TEST_CASE("lasso with a huge penalty collapses to the target mean") {
  Rng rng(2);
  const Eigen::MatrixXd X = random_design(rng, 200, 5);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) y[i] = 2.0 + rng.normal();
  LearnerSpec spec;
  spec.fixed_penalty = 1e6;
  const FittedModel model = fit_learner(spec, X, y, TaskKind::regress);
  const auto& linear = std::get<LinearModel>(model.impl);
  CHECK(linear.coef.cwiseAbs().maxCoeff() == 0.0);
  CHECK(linear.intercept == doctest::Approx(y.mean()).epsilon(1e-12));
}

TEST_CASE("constant targets give a constant predictor") {
  Rng rng(3);
  const Eigen::MatrixXd X = random_design(rng, 50, 3);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(50, 1.0);
  const FittedModel model = fit_learner(LearnerSpec{}, X, y, TaskKind::classify);
  CHECK(std::holds_alternative<ConstantModel>(model.impl));
  CHECK(predict_one(model, X.row(0).transpose()) == doctest::Approx(1.0));
}

TEST_CASE("logistic regression recovers a known link") {
  Rng rng(4);
  const int n = 4000;
  const Eigen::MatrixXd X = random_design(rng, n, 4);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.bernoulli(logistic(0.8 * X(i, 0) - 0.5 * X(i, 1)));
  LearnerSpec spec;
  spec.family = LearnerFamily::l2_logistic;
  const FittedModel model = fit_learner(spec, X, y, TaskKind::classify);
  // mean absolute probability error on fresh draws
  double mae = 0.0;
  const int m = 500;
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd x(4);
    for (int j = 0; j < 4; ++j) x[j] = rng.normal();
    mae += std::abs(predict_one(model, x) - logistic(0.8 * x[0] - 0.5 * x[1]));
  }
  CHECK(mae / m < 0.05);
  // probabilities live in [0,1] before any clipping
  const Eigen::VectorXd probs = predict(model, X);
  CHECK(probs.minCoeff() >= 0.0);
  CHECK(probs.maxCoeff() <= 1.0);
}

TEST_CASE("classification rejects non-binary targets") {
  Rng rng(5);
  const Eigen::MatrixXd X = random_design(rng, 30, 2);
  Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(30, 0.0, 2.0);
  CHECK_THROWS_AS(fit_learner(LearnerSpec{}, X, y, TaskKind::classify), ConfigError);
}

TEST_CASE("propensity clipping floors the denominator value") {
  LearnerSpec spec;
  CHECK(clip_propensity(0.004, spec) == doctest::Approx(0.01));
  CHECK(clip_propensity(0.5, spec) == doctest::Approx(0.5));
  CHECK(clip_propensity(1.2, spec) == doctest::Approx(1.0));
}

TEST_CASE("saturated learner reproduces exact cell means, weighted and not") {
  Eigen::MatrixXd X(6, 2);
  X << 0, 0, 0, 0, 0, 1, 0, 1, 1, 0, 1, 0;
  Eigen::VectorXd y(6);
  y << 1.0, 3.0, 5.0, 5.0, -1.0, 0.0;
  LearnerSpec spec;
  spec.family = LearnerFamily::saturated;
  const FittedModel model = fit_learner(spec, X, y, TaskKind::regress);
  Eigen::VectorXd probe(2);
  probe << 0, 0;
  CHECK(predict_one(model, probe) == doctest::Approx(2.0));
  probe << 0, 1;
  CHECK(predict_one(model, probe) == doctest::Approx(5.0));
  probe << 1, 1;  // unseen cell falls back to the global mean
  CHECK(predict_one(model, probe) == doctest::Approx(y.mean()));

  Eigen::VectorXd w(6);
  w << 1, 3, 1, 1, 1, 1;
  const FittedModel weighted = fit_learner(spec, X, y, TaskKind::regress, w);
  probe << 0, 0;
  CHECK(predict_one(weighted, probe) == doctest::Approx((1.0 + 3.0 * 3.0) / 4.0));
}

TEST_CASE("weighted fits are rejected outside the saturated family") {
  Eigen::MatrixXd X(4, 1);
  X << 0, 1, 2, 3;
  Eigen::VectorXd y(4);
  y << 0, 1, 2, 3;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(4);
  CHECK_THROWS_AS(fit_learner(LearnerSpec{}, X, y, TaskKind::regress, w), ConfigError);
}

TEST_CASE("boosted stumps fit a nonlinear regression surface") {
  Rng rng(6);
  const int n = 3000;
  const Eigen::MatrixXd X = random_design(rng, n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i)
    y[i] = (X(i, 0) > 0.3 ? 2.0 : -1.0) + 0.5 * (X(i, 1) > -0.5) + 0.1 * rng.normal();
  LearnerSpec spec;
  spec.family = LearnerFamily::boosted_stumps;
  const FittedModel model = fit_learner(spec, X, y, TaskKind::regress);
  CHECK(model.rounds > 5);
  CHECK(r_squared(predict(model, X), y) > 0.9);
}

TEST_CASE("boosted stumps classify with probabilities in range") {
  Rng rng(7);
  const int n = 2000;
  const Eigen::MatrixXd X = random_design(rng, n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.bernoulli(X(i, 0) > 0 ? 0.85 : 0.15);
  LearnerSpec spec;
  spec.family = LearnerFamily::boosted_stumps;
  const FittedModel model = fit_learner(spec, X, y, TaskKind::classify);
  const Eigen::VectorXd probs = predict(model, X);
  CHECK(probs.minCoeff() >= 0.0);
  CHECK(probs.maxCoeff() <= 1.0);
  double correct = 0;
  for (int i = 0; i < n; ++i) correct += (probs[i] > 0.5) == (y[i] > 0.5);
  CHECK(correct / n > 0.8);
}

TEST_CASE("learner spec invariants are enforced") {
  LearnerSpec bad;
  bad.clip_lo = 0.0;
  CHECK_THROWS_AS(bad.check(), ConfigError);
  bad = LearnerSpec{};
  bad.penalty_grid = 0;
  CHECK_THROWS_AS(bad.check(), ConfigError);
}
