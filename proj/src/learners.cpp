#include "dynlate/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dynlate/scm_sim.hpp"  // logistic()

namespace dynlate {

void LearnerSpec::check() const {
  if (penalty_grid < 1) throw ConfigError("penalty grid must be nonempty");
  if (!(clip_lo > 0.0 && clip_lo < clip_hi && clip_hi <= 1.0))
    throw ConfigError("propensity clip bounds must satisfy 0 < lo < hi <= 1");
  if (cv_folds < 2) throw ConfigError("cv folds must be >= 2");
}

std::string feature_key(const Eigen::Ref<const Eigen::VectorXd>& x) {
  std::string key(x.size() * sizeof(double), '\0');
  std::memcpy(key.data(), x.data(), key.size());
  return key;
}

double predict_one(const FittedModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (const auto* c = std::get_if<ConstantModel>(&model.impl)) return c->value;
  if (const auto* m = std::get_if<LinearModel>(&model.impl)) {
    const double eta = m->coef.dot(x) + m->intercept;
    return m->logistic_link ? logistic(eta) : eta;
  }
  if (const auto* s = std::get_if<SaturatedModel>(&model.impl)) {
    const auto it = s->cell_means.find(feature_key(x));
    return it == s->cell_means.end() ? s->fallback : it->second;
  }
  const auto& ens = std::get<StumpEnsemble>(model.impl);
  double eta = ens.base;
  for (const Stump& st : ens.stumps) eta += x[st.feature] <= st.threshold ? st.left : st.right;
  return ens.logistic_link ? logistic(eta) : eta;
}

Eigen::VectorXd predict(const FittedModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X) {
  Eigen::VectorXd out(X.rows());
  if (const auto* m = std::get_if<LinearModel>(&model.impl)) {
    out = (X * m->coef).array() + m->intercept;
    if (m->logistic_link) out = out.unaryExpr([](double v) { return logistic(v); });
    return out;
  }
  for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict_one(model, X.row(i).transpose());
  return out;
}

namespace {

constexpr double kCoordTol = 1e-7;
constexpr double kGradTol = 1e-8;
constexpr double kSdFloor = 1e-12;

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // 1/sd, zero for constant columns

  static Standardizer fit(const Eigen::MatrixXd& X) {
    Standardizer s;
    s.mean = X.colwise().mean();
    Eigen::VectorXd var =
        (X.rowwise() - s.mean.transpose()).array().square().colwise().mean();
    s.scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double sd = std::sqrt(std::max(var[j], 0.0));
      s.scale[j] = sd < kSdFloor ? 0.0 : 1.0 / sd;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    return (X.rowwise() - mean.transpose()).array().rowwise() * scale.transpose().array();
  }
};

Eigen::VectorXd penalty_grid_values(double lambda_max, int grid, double min_ratio) {
  Eigen::VectorXd grid_values(grid);
  if (grid == 1) {
    grid_values[0] = lambda_max;
    return grid_values;
  }
  const double log_hi = std::log(lambda_max);
  const double log_lo = std::log(lambda_max * min_ratio);
  for (int k = 0; k < grid; ++k)
    grid_values[k] = std::exp(log_hi + (log_lo - log_hi) * k / (grid - 1));
  return grid_values;
}

// ---------------------------------------------------------------------------
// Lasso: coordinate descent on the Gram matrix, warm-started down the path.
// Objective (1/2n)||y - Xb||^2 + lambda ||b||_1 on standardized columns.
// ---------------------------------------------------------------------------

double soft_threshold(double value, double lambda) {
  if (value > lambda) return value - lambda;
  if (value < -lambda) return value + lambda;
  return 0.0;
}

void lasso_cd(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double lambda,
              Eigen::VectorXd& beta, Eigen::VectorXd& gram_beta) {
  const Eigen::Index n_features = xty.size();
  for (int pass = 0; pass < 1000; ++pass) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < n_features; ++j) {
      const double gjj = gram(j, j);
      if (gjj < kSdFloor) continue;
      const double rho = xty[j] - gram_beta[j] + gjj * beta[j];
      const double updated = soft_threshold(rho, lambda) / gjj;
      const double change = updated - beta[j];
      if (change != 0.0) {
        gram_beta.noalias() += gram.col(j) * change;
        beta[j] = updated;
        max_change = std::max(max_change, std::abs(change));
      }
    }
    if (max_change < kCoordTol) break;
  }
}

// Coefficient path over a descending penalty grid, standardized scale.
Eigen::MatrixXd lasso_path(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& yc,
                           const Eigen::VectorXd& lambdas) {
  const Eigen::Index n = Xs.rows();
  const Eigen::Index n_features = Xs.cols();
  const Eigen::MatrixXd gram = Xs.transpose() * Xs / static_cast<double>(n);
  const Eigen::VectorXd xty = Xs.transpose() * yc / static_cast<double>(n);
  Eigen::MatrixXd path(n_features, lambdas.size());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(n_features);
  Eigen::VectorXd gram_beta = Eigen::VectorXd::Zero(n_features);
  for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
    lasso_cd(gram, xty, lambdas[k], beta, gram_beta);
    path.col(k) = beta;
  }
  return path;
}

LinearModel unstandardize(const Eigen::VectorXd& beta_std, const Standardizer& st,
                          double y_mean, bool logistic_link) {
  LinearModel m;
  m.logistic_link = logistic_link;
  m.coef = beta_std.cwiseProduct(st.scale);
  m.intercept = y_mean - m.coef.dot(st.mean);
  return m;
}

double lasso_lambda_max(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& yc) {
  const double n = static_cast<double>(Xs.rows());
  return std::max((Xs.transpose() * yc).cwiseAbs().maxCoeff() / n, kSdFloor);
}

FittedModel fit_lasso(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                      const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows();
  const Standardizer st = Standardizer::fit(X);
  const Eigen::MatrixXd Xs = st.apply(X);
  const double y_mean = y.mean();
  const Eigen::VectorXd yc = y.array() - y_mean;

  Eigen::VectorXd lambdas;
  if (spec.fixed_penalty) {
    lambdas.resize(1);
    lambdas[0] = *spec.fixed_penalty;
  } else {
    lambdas = penalty_grid_values(lasso_lambda_max(Xs, yc), spec.penalty_grid,
                                  spec.penalty_min_ratio);
  }

  Eigen::Index chosen = 0;
  if (lambdas.size() > 1 && n >= 2 * spec.cv_folds) {
    const int K = spec.cv_folds;
    Eigen::VectorXd val_sse = Eigen::VectorXd::Zero(lambdas.size());
    for (int fold = 0; fold < K; ++fold) {
      std::vector<Eigen::Index> train, val;
      for (Eigen::Index i = 0; i < n; ++i) ((i % K) == fold ? val : train).push_back(i);
      Eigen::MatrixXd Xtr(train.size(), X.cols()), Xva(val.size(), X.cols());
      Eigen::VectorXd ytr(train.size()), yva(val.size());
      for (size_t i = 0; i < train.size(); ++i) {
        Xtr.row(i) = X.row(train[i]);
        ytr[i] = y[train[i]];
      }
      for (size_t i = 0; i < val.size(); ++i) {
        Xva.row(i) = X.row(val[i]);
        yva[i] = y[val[i]];
      }
      const Standardizer st_tr = Standardizer::fit(Xtr);
      const Eigen::MatrixXd Xtr_s = st_tr.apply(Xtr);
      const double ytr_mean = ytr.mean();
      const Eigen::MatrixXd path = lasso_path(Xtr_s, ytr.array() - ytr_mean, lambdas);
      for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
        const LinearModel m = unstandardize(path.col(k), st_tr, ytr_mean, false);
        val_sse[k] += ((Xva * m.coef).array() + m.intercept - yva.array()).square().sum();
      }
    }
    val_sse.minCoeff(&chosen);
  }

  const Eigen::MatrixXd path = lasso_path(Xs, yc, lambdas);
  FittedModel model;
  model.task = TaskKind::regress;
  model.chosen_penalty = lambdas[chosen];
  model.impl = unstandardize(path.col(chosen), st, y_mean, false);
  return model;
}

// ---------------------------------------------------------------------------
// l2-penalized logistic regression via damped Newton (IRLS). The intercept is
// unpenalized; features enter standardized.
// ---------------------------------------------------------------------------

double logistic_objective(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, double lambda,
                          const Eigen::VectorXd& beta) {
  // mean log(1 + exp(-s eta)) with s = 2y-1, computed stably.
  double loss = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double s = 2.0 * y[i] - 1.0;
    const double m = -s * eta[i];
    loss += m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
  }
  return loss / static_cast<double>(eta.size()) + 0.5 * lambda * beta.squaredNorm();
}

// Newton path over a descending penalty grid; beta/intercept act as warm
// start and receive the final iterate.
struct LogisticState {
  Eigen::VectorXd beta;
  double intercept = 0.0;
};

void logistic_fit_at(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& y, double lambda,
                     LogisticState& state) {
  const Eigen::Index n = Xs.rows();
  const Eigen::Index n_features = Xs.cols();
  Eigen::VectorXd eta = Xs * state.beta;
  eta.array() += state.intercept;
  double objective = logistic_objective(eta, y, lambda, state.beta);

  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd mu = eta.unaryExpr([](double v) { return logistic(v); });
    const Eigen::VectorXd resid = mu - y;
    Eigen::VectorXd grad(n_features + 1);
    grad.head(n_features) = Xs.transpose() * resid / static_cast<double>(n);
    grad.head(n_features) += lambda * state.beta;
    grad[n_features] = resid.mean();
    if (grad.cwiseAbs().maxCoeff() < kGradTol) break;

    const Eigen::VectorXd w = mu.array() * (1.0 - mu.array()) + 1e-10;
    Eigen::MatrixXd hessian(n_features + 1, n_features + 1);
    const Eigen::MatrixXd Xw = Xs.array().colwise() * w.array();
    hessian.topLeftCorner(n_features, n_features).noalias() =
        Xw.transpose() * Xs / static_cast<double>(n);
    hessian.topLeftCorner(n_features, n_features).diagonal().array() += lambda;
    hessian.topRightCorner(n_features, 1) = Xw.colwise().sum().transpose() / static_cast<double>(n);
    hessian.bottomLeftCorner(1, n_features) = hessian.topRightCorner(n_features, 1).transpose();
    hessian(n_features, n_features) = w.mean();

    const Eigen::VectorXd step = hessian.ldlt().solve(grad);
    double scale = 1.0;
    for (int halving = 0; halving < 30; ++halving) {
      const Eigen::VectorXd beta_try = state.beta - scale * step.head(n_features);
      const double intercept_try = state.intercept - scale * step[n_features];
      Eigen::VectorXd eta_try = Xs * beta_try;
      eta_try.array() += intercept_try;
      const double objective_try = logistic_objective(eta_try, y, lambda, beta_try);
      if (objective_try <= objective + 1e-14) {
        state.beta = beta_try;
        state.intercept = intercept_try;
        eta.swap(eta_try);
        objective = objective_try;
        break;
      }
      scale *= 0.5;
    }
  }
}

double log_loss(const Eigen::VectorXd& prob, const Eigen::VectorXd& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    const double mu = std::min(std::max(prob[i], 1e-12), 1.0 - 1e-12);
    total += y[i] > 0.5 ? -std::log(mu) : -std::log(1.0 - mu);
  }
  return total;
}

FittedModel fit_logistic(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                         const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows();
  const Standardizer st = Standardizer::fit(X);
  const Eigen::MatrixXd Xs = st.apply(X);

  Eigen::VectorXd lambdas;
  if (spec.fixed_penalty) {
    lambdas.resize(1);
    lambdas[0] = *spec.fixed_penalty;
  } else {
    const double y_mean = y.mean();
    const double anchor =
        std::max((Xs.transpose() * (y.array() - y_mean).matrix()).cwiseAbs().maxCoeff() /
                     static_cast<double>(n),
                 1e-6);
    lambdas = penalty_grid_values(anchor, spec.penalty_grid, spec.penalty_min_ratio);
  }

  Eigen::Index chosen = 0;
  if (lambdas.size() > 1 && n >= 2 * spec.cv_folds) {
    const int K = spec.cv_folds;
    Eigen::VectorXd val_loss = Eigen::VectorXd::Zero(lambdas.size());
    for (int fold = 0; fold < K; ++fold) {
      std::vector<Eigen::Index> train, val;
      for (Eigen::Index i = 0; i < n; ++i) ((i % K) == fold ? val : train).push_back(i);
      Eigen::MatrixXd Xtr(train.size(), X.cols()), Xva(val.size(), X.cols());
      Eigen::VectorXd ytr(train.size()), yva(val.size());
      for (size_t i = 0; i < train.size(); ++i) {
        Xtr.row(i) = X.row(train[i]);
        ytr[i] = y[train[i]];
      }
      for (size_t i = 0; i < val.size(); ++i) {
        Xva.row(i) = X.row(val[i]);
        yva[i] = y[val[i]];
      }
      if (ytr.minCoeff() == ytr.maxCoeff()) {
        // Degenerate training split: constant prediction, same loss per lambda.
        const Eigen::VectorXd prob = Eigen::VectorXd::Constant(yva.size(), ytr.mean());
        val_loss.array() += log_loss(prob, yva);
        continue;
      }
      const Standardizer st_tr = Standardizer::fit(Xtr);
      const Eigen::MatrixXd Xtr_s = st_tr.apply(Xtr);
      LogisticState state{Eigen::VectorXd::Zero(X.cols()), 0.0};
      for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
        logistic_fit_at(Xtr_s, ytr, lambdas[k], state);
        const LinearModel m = unstandardize(state.beta, st_tr, state.intercept, true);
        // unstandardize() treats its second argument as the response mean;
        // for the logit scale the intercept shift is the same affine map.
        Eigen::VectorXd eta = (Xva * m.coef).array() + m.intercept;
        val_loss[k] += log_loss(eta.unaryExpr([](double v) { return logistic(v); }), yva);
      }
    }
    val_loss.minCoeff(&chosen);
  }

  LogisticState state{Eigen::VectorXd::Zero(X.cols()), 0.0};
  for (Eigen::Index k = 0; k <= chosen; ++k) logistic_fit_at(Xs, y, lambdas[k], state);

  FittedModel model;
  model.task = TaskKind::classify;
  model.chosen_penalty = lambdas[chosen];
  model.impl = unstandardize(state.beta, st, state.intercept, true);
  return model;
}

// ---------------------------------------------------------------------------
// Depth-1 gradient boosting with early stopping on a 20% holdout.
// ---------------------------------------------------------------------------

struct StumpFit {
  Stump stump;
  double score = std::numeric_limits<double>::infinity();
};

StumpFit best_stump(const Eigen::MatrixXd& X, const Eigen::VectorXd& residual,
                    const Eigen::VectorXd& hessian_weight) {
  StumpFit best;
  const Eigen::Index n = X.rows();
  constexpr int kQuantiles = 16;
  std::vector<double> column(n);
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    for (Eigen::Index i = 0; i < n; ++i) column[i] = X(i, f);
    std::sort(column.begin(), column.end());
    double prev_threshold = std::numeric_limits<double>::quiet_NaN();
    for (int q = 1; q <= kQuantiles; ++q) {
      const double threshold = column[std::min<Eigen::Index>(n - 1, q * n / (kQuantiles + 1))];
      if (threshold == prev_threshold) continue;
      prev_threshold = threshold;
      double sum_l = 0.0, sum_r = 0.0, w_l = 0.0, w_r = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (X(i, f) <= threshold) {
          sum_l += residual[i];
          w_l += hessian_weight[i];
        } else {
          sum_r += residual[i];
          w_r += hessian_weight[i];
        }
      }
      if (w_l < 1e-10 || w_r < 1e-10) continue;
      const double score = -(sum_l * sum_l / w_l + sum_r * sum_r / w_r);
      if (score < best.score) {
        best.score = score;
        best.stump = {static_cast<int>(f), threshold, sum_l / w_l, sum_r / w_r};
      }
    }
  }
  return best;
}

FittedModel fit_boosted(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& y, TaskKind task) {
  const Eigen::Index n = X.rows();
  const Eigen::Index n_holdout = std::max<Eigen::Index>(1, n / 5);
  const Eigen::Index n_train = n - n_holdout;
  // Deterministic stride split keeps both parts representative.
  std::vector<Eigen::Index> train_rows, holdout_rows;
  for (Eigen::Index i = 0; i < n; ++i)
    ((i % 5) == 4 ? holdout_rows : train_rows).push_back(i);
  Eigen::MatrixXd Xtr(n_train, X.cols()), Xho(n_holdout, X.cols());
  Eigen::VectorXd ytr(n_train), yho(n_holdout);
  for (Eigen::Index i = 0; i < n_train; ++i) {
    Xtr.row(i) = X.row(train_rows[i]);
    ytr[i] = y[train_rows[i]];
  }
  for (Eigen::Index i = 0; i < n_holdout; ++i) {
    Xho.row(i) = X.row(holdout_rows[i]);
    yho[i] = y[holdout_rows[i]];
  }

  const bool classify = task == TaskKind::classify;
  StumpEnsemble ens;
  ens.logistic_link = classify;
  if (classify) {
    const double mu0 = std::min(std::max(ytr.mean(), 1e-6), 1.0 - 1e-6);
    ens.base = std::log(mu0 / (1.0 - mu0));
  } else {
    ens.base = ytr.mean();
  }

  Eigen::VectorXd eta_tr = Eigen::VectorXd::Constant(n_train, ens.base);
  Eigen::VectorXd eta_ho = Eigen::VectorXd::Constant(n_holdout, ens.base);
  double best_loss = std::numeric_limits<double>::infinity();
  int best_rounds = 0;
  int since_best = 0;

  for (int round = 0; round < spec.max_boost_rounds; ++round) {
    Eigen::VectorXd residual(n_train), hessian_weight(n_train);
    if (classify) {
      const Eigen::VectorXd mu = eta_tr.unaryExpr([](double v) { return logistic(v); });
      residual = ytr - mu;
      hessian_weight = (mu.array() * (1.0 - mu.array())).max(1e-6);
    } else {
      residual = ytr - eta_tr;
      hessian_weight.setOnes();
    }
    StumpFit fit = best_stump(Xtr, residual, hessian_weight);
    if (!std::isfinite(fit.score)) break;
    fit.stump.left *= spec.shrinkage;
    fit.stump.right *= spec.shrinkage;
    ens.stumps.push_back(fit.stump);
    for (Eigen::Index i = 0; i < n_train; ++i)
      eta_tr[i] += Xtr(i, fit.stump.feature) <= fit.stump.threshold ? fit.stump.left
                                                                    : fit.stump.right;
    for (Eigen::Index i = 0; i < n_holdout; ++i)
      eta_ho[i] += Xho(i, fit.stump.feature) <= fit.stump.threshold ? fit.stump.left
                                                                    : fit.stump.right;
    double loss;
    if (classify) {
      loss = log_loss(eta_ho.unaryExpr([](double v) { return logistic(v); }), yho);
    } else {
      loss = (eta_ho - yho).squaredNorm();
    }
    if (loss < best_loss - 1e-12) {
      best_loss = loss;
      best_rounds = round + 1;
      since_best = 0;
    } else if (++since_best >= spec.early_stopping_patience) {
      break;
    }
  }
  ens.stumps.resize(best_rounds);

  FittedModel model;
  model.task = task;
  model.rounds = best_rounds;
  model.impl = std::move(ens);
  return model;
}

}  // namespace

FittedModel fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                        const Eigen::VectorXd& y, TaskKind task, const Eigen::VectorXd& weights) {
  spec.check();
  if (X.rows() != y.size()) throw ConfigError("design and target sizes differ");
  if (X.rows() == 0) throw ConfigError("cannot fit on an empty sample");
  const bool weighted = weights.size() > 0;
  if (weighted && weights.size() != y.size())
    throw ConfigError("weight vector size does not match targets");
  if (weighted && spec.family != LearnerFamily::saturated)
    throw ConfigError("weighted fits require the saturated learner family");

  if (spec.family == LearnerFamily::saturated) {
    SaturatedModel sat;
    std::unordered_map<std::string, std::pair<double, double>> acc;  // key -> (sum w*y, sum w)
    double total_wy = 0.0, total_w = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double w = weighted ? weights[i] : 1.0;
      auto& cell = acc[feature_key(X.row(i).transpose())];
      cell.first += w * y[i];
      cell.second += w;
      total_wy += w * y[i];
      total_w += w;
    }
    for (auto& [key, cell] : acc) {
      if (cell.second > 0.0) sat.cell_means[key] = cell.first / cell.second;
    }
    sat.fallback = total_w > 0.0 ? total_wy / total_w : 0.0;
    FittedModel model;
    model.task = task;
    model.impl = std::move(sat);
    return model;
  }

  if (y.maxCoeff() - y.minCoeff() < kSdFloor) {
    FittedModel model;
    model.task = task;
    model.impl = ConstantModel{y.size() > 0 ? y.mean() : 0.0};
    return model;
  }

  if (task == TaskKind::classify) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y[i] != 0.0 && y[i] != 1.0)
        throw ConfigError("classification targets must be 0/1");
    }
  }

  switch (spec.family) {
    case LearnerFamily::l1_linear:
      if (task == TaskKind::classify) return fit_logistic(spec, X, y);
      return fit_lasso(spec, X, y);
    case LearnerFamily::l2_logistic:
      if (task == TaskKind::regress) return fit_lasso(spec, X, y);
      return fit_logistic(spec, X, y);
    case LearnerFamily::boosted_stumps:
      return fit_boosted(spec, X, y, task);
    default:
      throw ConfigError("unknown learner family");
  }
}

}  // namespace dynlate
