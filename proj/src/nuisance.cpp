#include "dynlate/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "dynlate/rng.hpp"

namespace dynlate {

CrossFitPlan CrossFitPlan::make(long n, int K, std::uint64_t seed) {
  if (K < 1) throw ConfigError("fold count must be >= 1");
  if (K > 1 && n < K) throw ConfigError("need at least one row per fold");
  CrossFitPlan plan;
  plan.K = K;
  plan.fold_of_row.resize(n);
  if (K == 1) {
    std::fill(plan.fold_of_row.begin(), plan.fold_of_row.end(), 0);
    return plan;
  }
  std::vector<long> perm(n);
  std::iota(perm.begin(), perm.end(), 0L);
  Rng rng(seed ^ 0x5bf03635f0a5b1c9ULL);
  for (long i = n - 1; i > 0; --i) {
    const long j = static_cast<long>(rng.uniform() * (i + 1));
    std::swap(perm[i], perm[std::min(j, i)]);
  }
  for (long i = 0; i < n; ++i) plan.fold_of_row[perm[i]] = static_cast<int>(i % K);
  return plan;
}

PanelDesign PanelDesign::build(const PanelDataset& ds) {
  const ValidationReport report = validate_dataset(ds, false);
  if (!report.ok())
    throw ValidationError("dataset fails shape validation (" +
                          std::to_string(report.shape_violations) + " rows)");
  PanelDesign design;
  design.T = ds.T;
  design.p = ds.p;
  design.n = ds.n();
  design.history.resize(ds.T);
  for (int t = 1; t <= ds.T; ++t)
    design.history[t - 1].resize(design.n, history_feature_length(t, ds.p));
  design.z.resize(design.n, ds.T);
  design.d.resize(design.n, ds.T);
  design.y.resize(design.n);
  design.weights = ds.weights;
  for (long i = 0; i < design.n; ++i) {
    const Trajectory& tr = ds.rows[i];
    for (int t = 1; t <= ds.T; ++t)
      design.history[t - 1].row(i) = history_features(tr, t).features.transpose();
    for (int t = 0; t < ds.T; ++t) {
      design.z(i, t) = tr.z[t];
      design.d(i, t) = tr.d[t];
    }
    design.y[i] = tr.y;
  }
  return design;
}

Eigen::VectorXd TerminalTarget::values(const PanelDesign& design) const {
  if (kind == Kind::outcome) return design.y;
  Eigen::VectorXd out(design.n);
  for (long i = 0; i < design.n; ++i) {
    if (kind == Kind::event_not_zero) {
      out[i] = design.d.row(i).sum() > 0.0 ? 1.0 : 0.0;
    } else {
      bool match = true;
      for (int t = 0; t < design.T; ++t) {
        if (static_cast<int>(design.d(i, t)) != d_bits[t]) match = false;
      }
      out[i] = match ? 1.0 : 0.0;
    }
  }
  return out;
}

namespace {

// Gathers the rows of a training subsample into dense matrices.
struct Subsample {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
};

Subsample gather(const PanelDesign& design, const Eigen::MatrixXd& features,
                 const Eigen::VectorXd& target, const std::vector<long>& rows) {
  Subsample sub;
  sub.X.resize(rows.size(), features.cols());
  sub.y.resize(rows.size());
  if (design.weights.size() > 0) sub.w.resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    sub.X.row(i) = features.row(rows[i]);
    sub.y[i] = target[rows[i]];
    if (design.weights.size() > 0) sub.w[i] = design.weights[rows[i]];
  }
  return sub;
}

}  // namespace

NestedModels fit_nested(const PanelDesign& design, const CrossFitPlan& plan, const ArmRule& arm,
                        int bottom_level, const TerminalTarget& target,
                        const LearnerSpec& regression, const LearnerSpec& classification) {
  const int T = design.T;
  NestedModels nested;
  nested.bottom_level = bottom_level;
  nested.model.assign(plan.K, std::vector<FittedModel>(T));
  nested.values = Eigen::MatrixXd::Zero(design.n, T);

  const Eigen::VectorXd terminal = target.values(design);
  for (int fold = 0; fold < plan.K; ++fold) {
    Eigen::VectorXd pseudo = terminal;
    for (int t = T; t >= bottom_level; --t) {
      std::vector<long> rows;
      for (long i = 0; i < design.n; ++i) {
        if (!plan.in_training(i, fold)) continue;
        if (static_cast<int>(design.z(i, t - 1)) == arm.value(design, i, t)) rows.push_back(i);
      }
      if (rows.empty())
        throw EstimabilityError("arm overlap violated at period " + std::to_string(t));
      const Subsample sub = gather(design, design.history[t - 1], pseudo, rows);
      const bool classify = t == T && target.is_classification();
      FittedModel model = fit_learner(classify ? classification : regression, sub.X, sub.y,
                                      classify ? TaskKind::classify : TaskKind::regress, sub.w);
      pseudo = predict(model, design.history[t - 1]);
      for (long i = 0; i < design.n; ++i) {
        if (plan.K == 1 || plan.fold_of_row[i] == fold) nested.values(i, t - 1) = pseudo[i];
      }
      nested.model[fold][t - 1] = std::move(model);
    }
  }
  return nested;
}

NestedModels fit_nested_outcome(const PanelDesign& design, const CrossFitPlan& plan,
                                const std::vector<int>& z, const LearnerSpec& regression,
                                const LearnerSpec& classification) {
  return fit_nested(design, plan, ArmRule::fixed(z), 1, TerminalTarget::outcome(), regression,
                    classification);
}

NestedModels fit_nested_treatment(const PanelDesign& design, const CrossFitPlan& plan,
                                  const std::vector<int>& z, const TerminalTarget& event,
                                  const LearnerSpec& regression,
                                  const LearnerSpec& classification) {
  return fit_nested(design, plan, ArmRule::fixed(z), 1, event, regression, classification);
}

PropensityModels fit_propensities(const PanelDesign& design, const CrossFitPlan& plan,
                                  const LearnerSpec& classification) {
  PropensityModels props;
  props.model.assign(plan.K, std::vector<FittedModel>(design.T));
  props.prob1 = Eigen::MatrixXd::Zero(design.n, design.T);
  for (int fold = 0; fold < plan.K; ++fold) {
    for (int t = 1; t <= design.T; ++t) {
      std::vector<long> rows;
      for (long i = 0; i < design.n; ++i) {
        if (plan.in_training(i, fold)) rows.push_back(i);
      }
      Eigen::VectorXd z_col = design.z.col(t - 1);
      const Subsample sub = gather(design, design.history[t - 1], z_col, rows);
      if (design.weights.size() == 0 && sub.y.minCoeff() == sub.y.maxCoeff())
        throw EstimabilityError("degenerate instrument at period " + std::to_string(t));
      FittedModel model =
          fit_learner(classification, sub.X, sub.y, TaskKind::classify, sub.w);
      const Eigen::VectorXd prob = predict(model, design.history[t - 1]);
      for (long i = 0; i < design.n; ++i) {
        if (plan.K == 1 || plan.fold_of_row[i] == fold) props.prob1(i, t - 1) = prob[i];
      }
      props.model[fold][t - 1] = std::move(model);
    }
  }
  return props;
}

Eigen::MatrixXd plugin_riesz_values(const PanelDesign& design, const PropensityModels& props,
                                    const ArmRule& arm, const LearnerSpec& clip_spec) {
  Eigen::MatrixXd a(design.n, design.T);
  for (long i = 0; i < design.n; ++i) {
    double product = 1.0;
    for (int t = 1; t <= design.T; ++t) {
      const int target = arm.value(design, i, t);
      if (static_cast<int>(design.z(i, t - 1)) != target) {
        product = 0.0;
      } else if (product != 0.0) {
        const double p1 = props.prob1(i, t - 1);
        const double p_target = target == 1 ? p1 : 1.0 - p1;
        product /= clip_propensity(p_target, clip_spec);
      }
      a(i, t - 1) = product;
    }
  }
  return a;
}

Eigen::VectorXd riesz_weights_plugin(const PropensityModels& props, int fold,
                                     const Trajectory& tr, const std::vector<int>& z,
                                     const LearnerSpec& clip_spec) {
  const int T = tr.periods();
  Eigen::VectorXd a(T);
  double product = 1.0;
  for (int t = 1; t <= T; ++t) {
    if (tr.z[t - 1] != z[t - 1]) {
      product = 0.0;
    } else if (product != 0.0) {
      const Eigen::VectorXd h = history_features(tr, t).features;
      const double p1 = predict_one(props.model[fold][t - 1], h);
      const double p_target = z[t - 1] == 1 ? p1 : 1.0 - p1;
      product /= clip_propensity(p_target, clip_spec);
    }
    a[t - 1] = product;
  }
  return a;
}

double RieszLevelModel::value(const Eigen::Ref<const Eigen::VectorXd>& h, double z_value) const {
  const Eigen::Index n_h = coef.size() - 1;
  return coef.head(n_h).dot(h) + coef[n_h] * z_value + intercept;
}

namespace {

// Ridge solve of the Riesz normal equations (A + lambda*P) w = b with the
// intercept unpenalized. Bumps the penalty when the solve degenerates.
Eigen::VectorXd riesz_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double lambda) {
  const Eigen::Index dim = A.rows();
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd reg = A;
    reg.diagonal().head(dim - 1).array() += lambda;
    const Eigen::VectorXd w = reg.ldlt().solve(b);
    if (w.allFinite() && (reg * w - b).cwiseAbs().maxCoeff() < 1e-6 * (1.0 + b.cwiseAbs().maxCoeff()))
      return w;
    std::cerr << "[dynlate] riesz normal equations ill-conditioned, raising penalty to "
              << lambda * 10.0 << "\n";
    lambda *= 10.0;
  }
  throw EstimabilityError("riesz normal equations could not be solved");
}

}  // namespace

RieszModels fit_riesz_erm(const PanelDesign& design, const CrossFitPlan& plan,
                          const std::vector<int>& z, const LearnerSpec& spec) {
  spec.check();
  const int T = design.T;
  RieszModels out;
  out.model.assign(plan.K, std::vector<RieszLevelModel>(T));
  out.values = Eigen::MatrixXd::Zero(design.n, T);

  for (int fold = 0; fold < plan.K; ++fold) {
    std::vector<long> rows;
    for (long i = 0; i < design.n; ++i) {
      if (plan.in_training(i, fold)) rows.push_back(i);
    }
    const long m = static_cast<long>(rows.size());
    Eigen::VectorXd prev_train = Eigen::VectorXd::Ones(m);
    Eigen::VectorXd prev_all = Eigen::VectorXd::Ones(design.n);

    for (int t = 1; t <= T; ++t) {
      const Eigen::MatrixXd& H = design.history[t - 1];
      const Eigen::Index n_h = H.cols();
      // Columns: standardized H_t, raw Z_t, intercept.
      Eigen::MatrixXd B_obs(m, n_h + 2), B_arm(m, n_h + 2);
      Eigen::VectorXd h_mean = Eigen::VectorXd::Zero(n_h), h_scale = Eigen::VectorXd::Ones(n_h);
      {
        Eigen::MatrixXd Hsub(m, n_h);
        for (long i = 0; i < m; ++i) Hsub.row(i) = H.row(rows[i]);
        h_mean = Hsub.colwise().mean();
        const Eigen::VectorXd sd =
            ((Hsub.rowwise() - h_mean.transpose()).array().square().colwise().mean())
                .sqrt()
                .matrix();
        for (Eigen::Index j = 0; j < n_h; ++j) h_scale[j] = sd[j] < 1e-12 ? 0.0 : 1.0 / sd[j];
        for (long i = 0; i < m; ++i) {
          B_obs.row(i).head(n_h) =
              ((Hsub.row(i) - h_mean.transpose()).array() * h_scale.transpose().array()).matrix();
          B_obs(i, n_h) = design.z(rows[i], t - 1);
          B_obs(i, n_h + 1) = 1.0;
          B_arm.row(i).head(n_h) = B_obs.row(i).head(n_h);
          B_arm(i, n_h) = z[t - 1];
          B_arm(i, n_h + 1) = 1.0;
        }
      }
      const Eigen::MatrixXd A = B_obs.transpose() * B_obs / static_cast<double>(m);
      const Eigen::VectorXd b = B_arm.transpose() * prev_train / static_cast<double>(m);

      // Penalty grid on the same loss, selected by k-fold validation.
      const double anchor = std::max(A.diagonal().maxCoeff(), 1e-8);
      Eigen::VectorXd lambdas(spec.penalty_grid);
      for (int k = 0; k < spec.penalty_grid; ++k) {
        const double frac = spec.penalty_grid == 1
                                ? 0.0
                                : static_cast<double>(k) / (spec.penalty_grid - 1);
        lambdas[k] = anchor * std::pow(spec.penalty_min_ratio, 1.0 - frac) * 1e-2;
      }
      Eigen::Index chosen = 0;
      if (spec.penalty_grid > 1 && m >= 2 * spec.cv_folds) {
        Eigen::VectorXd cv_loss = Eigen::VectorXd::Zero(spec.penalty_grid);
        const int K_cv = spec.cv_folds;
        for (int inner = 0; inner < K_cv; ++inner) {
          std::vector<long> tr_idx, va_idx;
          for (long i = 0; i < m; ++i) ((i % K_cv) == inner ? va_idx : tr_idx).push_back(i);
          Eigen::MatrixXd A_tr = Eigen::MatrixXd::Zero(n_h + 2, n_h + 2);
          Eigen::VectorXd b_tr = Eigen::VectorXd::Zero(n_h + 2);
          for (long i : tr_idx) {
            A_tr.noalias() += B_obs.row(i).transpose() * B_obs.row(i);
            b_tr.noalias() += B_arm.row(i).transpose() * prev_train[i];
          }
          A_tr /= static_cast<double>(tr_idx.size());
          b_tr /= static_cast<double>(tr_idx.size());
          for (int k = 0; k < spec.penalty_grid; ++k) {
            const Eigen::VectorXd w = riesz_solve(A_tr, b_tr, lambdas[k]);
            double loss = 0.0;
            for (long i : va_idx) {
              const double a_obs = B_obs.row(i).dot(w);
              const double a_arm = B_arm.row(i).dot(w);
              loss += a_obs * a_obs - 2.0 * prev_train[i] * a_arm;
            }
            cv_loss[k] += loss / static_cast<double>(va_idx.size());
          }
        }
        cv_loss.minCoeff(&chosen);
      }
      const Eigen::VectorXd w = riesz_solve(A, b, lambdas[chosen]);

      // Map back to raw feature scale.
      RieszLevelModel level;
      level.penalty = lambdas[chosen];
      level.coef.resize(n_h + 1);
      for (Eigen::Index j = 0; j < n_h; ++j) level.coef[j] = w[j] * h_scale[j];
      level.coef[n_h] = w[n_h];
      level.intercept = w[n_h + 1];
      for (Eigen::Index j = 0; j < n_h; ++j) level.intercept -= w[j] * h_scale[j] * h_mean[j];

      for (long i = 0; i < m; ++i) prev_train[i] = B_obs.row(i).dot(w);
      for (long i = 0; i < design.n; ++i) {
        const double value = level.value(H.row(i).transpose(), design.z(i, t - 1));
        if (plan.K == 1 || plan.fold_of_row[i] == fold) out.values(i, t - 1) = value;
        prev_all[i] = value;
      }
      out.model[fold][t - 1] = std::move(level);
    }
  }
  return out;
}

namespace {

FirstPeriodModels fit_first_period(const PanelDesign& design, const CrossFitPlan& plan,
                                   const Eigen::VectorXd& target, TaskKind task,
                                   const LearnerSpec& spec) {
  FirstPeriodModels out;
  out.model.resize(plan.K);
  out.values = Eigen::VectorXd::Zero(design.n);
  for (int fold = 0; fold < plan.K; ++fold) {
    std::vector<long> rows;
    for (long i = 0; i < design.n; ++i) {
      if (plan.in_training(i, fold) && static_cast<int>(design.z(i, 0)) == 1) rows.push_back(i);
    }
    if (rows.empty()) throw EstimabilityError("arm overlap violated at period 1");
    const Subsample sub = gather(design, design.history[0], target, rows);
    FittedModel model = fit_learner(spec, sub.X, sub.y, task, sub.w);
    const Eigen::VectorXd pred = predict(model, design.history[0]);
    for (long i = 0; i < design.n; ++i) {
      if (plan.K == 1 || plan.fold_of_row[i] == fold) out.values[i] = pred[i];
    }
    out.model[fold] = std::move(model);
  }
  return out;
}

}  // namespace

StaggeredNuisances fit_staggered_nuisances(const PanelDesign& design, const CrossFitPlan& plan,
                                           const LearnerSpec& regression,
                                           const LearnerSpec& classification) {
  if (design.T < 2) throw ConfigError("staggered nuisances need T >= 2");
  StaggeredNuisances stag;
  stag.f_d1 = fit_nested(design, plan, ArmRule::staggered(design.T), 2,
                         TerminalTarget::outcome(), regression, classification);

  // q regresses the level-2 pseudo-outcome f_2^{D_1*1}(H_2, D_1) on H_1
  // within {Z_1=1}. The per-fold pseudo-outcome must come from the same
  // fold's f model, so recompute it fold by fold.
  stag.q.model.resize(plan.K);
  stag.q.values = Eigen::VectorXd::Zero(design.n);
  for (int fold = 0; fold < plan.K; ++fold) {
    const Eigen::VectorXd pseudo =
        predict(stag.f_d1.model[fold][1], design.history[1]);
    std::vector<long> rows;
    for (long i = 0; i < design.n; ++i) {
      if (plan.in_training(i, fold) && static_cast<int>(design.z(i, 0)) == 1) rows.push_back(i);
    }
    if (rows.empty()) throw EstimabilityError("arm overlap violated at period 1");
    const Subsample sub = gather(design, design.history[0], pseudo, rows);
    FittedModel model = fit_learner(regression, sub.X, sub.y, TaskKind::regress, sub.w);
    const Eigen::VectorXd pred = predict(model, design.history[0]);
    for (long i = 0; i < design.n; ++i) {
      if (plan.K == 1 || plan.fold_of_row[i] == fold) stag.q.values[i] = pred[i];
    }
    stag.q.model[fold] = std::move(model);
  }

  stag.p = fit_first_period(design, plan, design.d.col(0), TaskKind::classify, classification);
  return stag;
}

}  // namespace dynlate
