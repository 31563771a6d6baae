#include <cmath>

#include "doctest.h"
#include "dynlate/estimator.hpp"
#include "dynlate/scm_sim.hpp"
#include "support.hpp"

using namespace dynlate;
using namespace dynlate::testsupport;

namespace {

EstimatorConfig exact_law_config() {
  EstimatorConfig cfg;
  cfg.regression.family = LearnerFamily::saturated;
  cfg.classification.family = LearnerFamily::saturated;
  cfg.folds = 1;
  return cfg;
}

EstimatorConfig saturated_cv_config(std::uint64_t seed) {
  EstimatorConfig cfg = exact_law_config();
  cfg.folds = 5;
  cfg.seed = seed;
  return cfg;
}

const int kZ10 = bits_to_index({1, 0});
const int kZ01 = bits_to_index({0, 1});
const int kZ11 = bits_to_index({1, 1});

}  // namespace

TEST_CASE("normal quantile matches the reference values") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-5));
  CHECK(normal_quantile(0.995) == doctest::Approx(2.575829).epsilon(1e-5));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK_THROWS_AS(normal_quantile(0.0), ConfigError);
}

TEST_CASE("moment composers: degenerate values") {
  Eigen::VectorXd f(2), a(2);
  // off-arm row: all representers zero, phi collapses to the base term
  f << 1.25, -0.5;
  a << 0.0, 0.0;
  CHECK(phi_from_values(f, a, 77.0) == doctest::Approx(1.25));
  // a == 1, f == 0: the sum telescopes to the outcome
  f.setZero();
  a.setOnes();
  CHECK(phi_from_values(f, a, 3.5) == doctest::Approx(3.5));
  // psi shares the same telescope with the event indicator terminal
  Eigen::VectorXd g(2);
  g << 0.4, 0.6;
  CHECK(psi_from_values(g, a, 1.0) == doctest::Approx(0.4 + (0.6 - 0.4) + (1.0 - 0.6)));
}

TEST_CASE("estimators reproduce the exact oracle on a law-weighted panel") {
  const DiscreteScm scm = staggered_four_type_scm();
  const PanelDataset ds = law_weighted_panel(scm);
  EstimationContext ctx(ds, exact_law_config());

  SUBCASE("when-to-treat LATEs") {
    const EstimateReport r2 = estimate_when_to_treat(ctx, 2);
    CHECK(r2.point == doctest::Approx(exact_late(scm, kZ01, kZ01)).epsilon(1e-6));
    const EstimateReport r1 = estimate_when_to_treat(ctx, 1);
    CHECK(r1.point == doctest::Approx(exact_late(scm, kZ10, kZ10)).epsilon(1e-6));
    CHECK(r1.denominator ==
          doctest::Approx(exact_counterfactuals(scm, kZ10).treat_probs[kZ10]).epsilon(1e-9));
  }

  SUBCASE("mixture LATE and its weights") {
    const MixtureResult mix = exact_mixture(scm, kZ11);
    const EstimateReport rep = estimate_mixture_beta(ctx, {1, 1});
    CHECK(rep.point == doctest::Approx(mix.beta).epsilon(1e-6));
  }

  SUBCASE("counterfactual means match the exact g-formula") {
    for (const std::vector<int> z :
         {std::vector<int>{0, 0}, std::vector<int>{1, 0}, std::vector<int>{0, 1},
          std::vector<int>{1, 1}}) {
      const EstimateReport rep = estimate_counterfactual_mean(ctx, z);
      const double oracle = g_formula_exact(scm, bits_to_index(z), GFormulaTarget::outcome());
      CHECK(rep.point == doctest::Approx(oracle).epsilon(1e-10));
    }
  }

  SUBCASE("compliance probabilities") {
    const EstimateReport rep = estimate_compliance_prob(ctx, {0, 0}, {0, 0});
    CHECK(rep.point == doctest::Approx(1.0).epsilon(1e-9));  // one-sided: D(0)=0
    const EstimateReport r11 = estimate_compliance_prob(ctx, {1, 1}, {1, 1});
    CHECK(r11.point ==
          doctest::Approx(exact_counterfactuals(scm, kZ11).treat_probs[kZ11]).epsilon(1e-9));
  }

  SUBCASE("staggered always-treat equals the exact always-treat LATE") {
    const EstimateReport rep = estimate_always_treat_staggered(ctx);
    CHECK(rep.point == doctest::Approx(exact_late(scm, kZ11, kZ11)).epsilon(1e-6));
  }

  SUBCASE("general two-period estimator equals the exact always-treat LATE") {
    // Staggered compliance implies the cross-period effect-compliance
    // independence the theorem assumes.
    const double point = estimate_always_treat_general_2p(ctx);
    CHECK(point == doctest::Approx(exact_late(scm, kZ11, kZ11)).epsilon(1e-6));
  }

  SUBCASE("strong-restriction plug-in equals the exact combination") {
    const MixtureResult mix = exact_mixture(scm, kZ11);
    const double tau_01 = exact_late(scm, kZ01, kZ01);
    // Pr(D(1,1)=(1,0)) = 0 on this SCM, so the (1,0) term drops out.
    const double oracle = (mix.beta - tau_01 * mix.weights[kZ01]) / mix.weights[kZ11];
    const EstimateReport rep = estimate_always_treat_strong(ctx);
    CHECK(rep.point == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("sampled discrete panel agrees with the oracle within 3 standard errors") {
  const DiscreteScm scm = staggered_four_type_scm();
  const PanelDataset ds = sample_discrete_panel(scm, 5000, 117);
  EstimationContext ctx(ds, saturated_cv_config(117));
  const EstimateReport rep = estimate_when_to_treat(ctx, 2);
  const double truth = exact_late(scm, kZ01, kZ01);
  CHECK(std::abs(rep.point - truth) < 3.0 * rep.std_error / std::sqrt(double(rep.n)));
}

TEST_CASE("CI width follows the report invariant exactly") {
  const DiscreteScm scm = staggered_four_type_scm();
  const PanelDataset ds = sample_discrete_panel(scm, 2000, 11);
  EstimationContext ctx(ds, saturated_cv_config(11));
  const EstimateReport rep = estimate_when_to_treat(ctx, 2);
  const double q = normal_quantile(0.975);
  CHECK(rep.ci_hi - rep.ci_lo ==
        doctest::Approx(2.0 * q * rep.std_error / std::sqrt(double(rep.n))).epsilon(1e-12));
  CHECK(rep.ci_lo <= rep.point);
  CHECK(rep.point <= rep.ci_hi);
}

TEST_CASE("complier mass below the floor raises an estimability error") {
  // Never-taker-only law: Pr(D((0,1))=(0,1)) = 0.
  DiscreteScm scm;
  scm.instrument_law = {0.25, 0.25, 0.25, 0.25};
  LatentType never;
  never.prob = 1.0;
  never.d_of_z = {0, 0, 0, 0};
  never.y_of_d = {1.0, 0.0, 0.0, 0.0};
  scm.types = {never};
  const PanelDataset ds = law_weighted_panel(scm);
  EstimationContext ctx(ds, exact_law_config());
  CHECK_THROWS_WITH_AS(estimate_when_to_treat(ctx, 2), doctest::Contains("complier mass"),
                       EstimabilityError);
}

TEST_CASE("when-to-treat period is range checked") {
  const DiscreteScm scm = staggered_four_type_scm();
  const PanelDataset ds = law_weighted_panel(scm);
  EstimationContext ctx(ds, exact_law_config());
  CHECK_THROWS_AS(estimate_when_to_treat(ctx, 0), ConfigError);
  CHECK_THROWS_AS(estimate_when_to_treat(ctx, 3), ConfigError);
}

TEST_CASE("staggered estimator rejects non-staggered data") {
  PanelDataset ds;
  ds.T = 2;
  ds.p = 1;
  for (int i = 0; i < 50; ++i) {
    ds.rows.push_back(discrete_row(bits_to_index({1, 1}), bits_to_index({1, 1}), 1.0));
    ds.rows.push_back(discrete_row(bits_to_index({0, 0}), 0, 0.0));
    ds.rows.push_back(discrete_row(bits_to_index({1, 0}), bits_to_index({1, 0}), 1.0));
  }
  // one defector: complied at t=1, encouraged at t=2, declined
  ds.rows.push_back(discrete_row(bits_to_index({1, 1}), bits_to_index({1, 0}), 1.0));
  EstimationContext ctx(ds, exact_law_config());
  CHECK_THROWS_WITH_AS(estimate_always_treat_staggered(ctx),
                       doctest::Contains("staggered compliance violated"), EstimabilityError);
}

TEST_CASE("orthogonality: single-nuisance perturbations leave the population moment flat") {
  const DiscreteScm scm = staggered_four_type_scm();
  const PanelDataset ds = law_weighted_panel(scm);
  EstimationContext ctx(ds, exact_law_config());
  const std::vector<int> z{0, 1}, zeros{0, 0};
  const double tau = exact_late(scm, kZ01, kZ01);

  const Eigen::MatrixXd f_z = ctx.outcome_models(z).values;
  const Eigen::MatrixXd f_0 = ctx.outcome_models(zeros).values;
  const Eigen::MatrixXd g_z = ctx.treatment_models(z, TerminalTarget::event(z)).values;
  const Eigen::MatrixXd a_z = ctx.riesz_values(z);
  const Eigen::MatrixXd a_0 = ctx.riesz_values(zeros);
  const Eigen::VectorXd indicator = TerminalTarget::event(z).values(ctx.design());
  const PanelDesign& design = ctx.design();

  // Perturbation directions must be functions of the nuisance arguments:
  // h_f,t and h_g,t of H_t (here the (z1, d1) cell at level 2, a constant at
  // level 1), h_a,t of (H_t, Z_t) supported on the arm like the closed-form
  // representer itself.
  auto h_level = [&](long i, int t, int salt) {
    if (t == 0) return 0.31 - 0.07 * salt;  // H_1 is a single cell
    const double z1 = design.z(i, 0);
    const double d1 = design.d(i, 0);
    return 0.2 + (0.4 - 0.1 * salt) * z1 - (0.3 + 0.05 * salt) * d1;
  };
  auto h_riesz = [&](long i, int t) {
    for (int s = 0; s <= t; ++s) {
      if (static_cast<int>(design.z(i, s)) != z[s]) return 0.0;
    }
    return t == 0 ? 0.5 : 0.3 + 0.25 * design.d(i, 0);
  };

  auto population_moment = [&](double eps_f, double eps_g, double eps_a) {
    double total = 0.0;
    for (long i = 0; i < design.n; ++i) {
      Eigen::VectorXd f_i = f_z.row(i).transpose();
      Eigen::VectorXd g_i = g_z.row(i).transpose();
      Eigen::VectorXd az_i = a_z.row(i).transpose();
      for (int t = 0; t < design.T; ++t) {
        f_i[t] += eps_f * h_level(i, t, 0);
        g_i[t] += eps_g * h_level(i, t, 1);
        az_i[t] += eps_a * h_riesz(i, t);
      }
      const double phi_z_i = phi_from_values(f_i, az_i, design.y[i]);
      const double phi_0_i =
          phi_from_values(f_0.row(i).transpose(), a_0.row(i).transpose(), design.y[i]);
      const double psi_i = psi_from_values(g_i, az_i, indicator[i]);
      total += design.weight(i) * (phi_z_i - phi_0_i - tau * psi_i);
    }
    return total / design.total_weight();
  };

  const double base = population_moment(0, 0, 0);
  CHECK(std::abs(base) < 1e-12);  // the debiased moment is centered at tau
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    CHECK(std::abs(population_moment(eps, 0, 0) - base) / eps < 1e-10);  // linear in f
    CHECK(std::abs(population_moment(0, eps, 0) - base) / eps < 1e-10);  // linear in g
    CHECK(std::abs(population_moment(0, 0, eps) - base) / eps < 1e-10);  // residuals centered
  }
  // Joint perturbation activates the bilinear remainder: exactly O(eps^2).
  const double shift_1 = std::abs(population_moment(1e-1, 1e-1, 1e-1) - base);
  const double shift_2 = std::abs(population_moment(1e-2, 1e-2, 1e-2) - base);
  CHECK(shift_1 / shift_2 == doctest::Approx(100.0).epsilon(0.2));
}

TEST_CASE("conditional LATE recovers per-cell effects on a two-cell initial state") {
  // Two stateless SCMs act as the two S_0 cells; rows carry s0 = 0 or 1.
  const DiscreteScm cell_a = staggered_four_type_scm();
  DiscreteScm cell_b = cell_a;
  for (auto& type : cell_b.types) {
    for (int d = 0; d < 4; ++d) type.y_of_d[d] *= -2.0;  // different cell effects
  }
  PanelDataset ds = law_weighted_panel(cell_a);
  const PanelDataset part_b = law_weighted_panel(cell_b);
  const long n_a = ds.n();
  for (long i = 0; i < part_b.n(); ++i) {
    Trajectory tr = part_b.rows[i];
    for (auto& s : tr.states) s.setOnes();
    ds.rows.push_back(tr);
  }
  Eigen::VectorXd weights(ds.n());
  weights.head(n_a) = 0.5 * ds.weights;
  weights.tail(part_b.n()) = 0.5 * part_b.weights;
  ds.weights = weights;

  EstimationContext ctx(ds, exact_law_config());
  ConditionalLateSpec spec;
  spec.kind = ConditionalLateSpec::Kind::when_to_treat;
  spec.t_star = 2;
  const double late_a = conditional_late(ctx, Eigen::VectorXd::Zero(1), spec);
  const double late_b = conditional_late(ctx, Eigen::VectorXd::Ones(1), spec);
  CHECK(late_a == doctest::Approx(exact_late(cell_a, kZ01, kZ01)).epsilon(1e-6));
  CHECK(late_b == doctest::Approx(exact_late(cell_b, kZ01, kZ01)).epsilon(1e-6));

  // Aggregation identity: averaging cell LATEs against cell compliance
  // recovers the unconditional estimate.
  const EstimateReport overall = estimate_when_to_treat(ctx, 2);
  const double c_a = exact_counterfactuals(cell_a, kZ01).treat_probs[kZ01];
  const double c_b = exact_counterfactuals(cell_b, kZ01).treat_probs[kZ01];
  const double aggregated =
      (late_a * 0.5 * c_a + late_b * 0.5 * c_b) / (0.5 * c_a + 0.5 * c_b);
  CHECK(aggregated == doctest::Approx(overall.point).epsilon(1e-6));

  // Staggered conditional form agrees with the per-cell always-treat LATE.
  spec.kind = ConditionalLateSpec::Kind::always_treat_staggered;
  CHECK(conditional_late(ctx, Eigen::VectorXd::Zero(1), spec) ==
        doctest::Approx(exact_late(cell_a, kZ11, kZ11)).epsilon(1e-6));
}

TEST_CASE("moment_phi on a fresh trajectory uses fold-averaged nuisances") {
  const DiscreteScm scm = staggered_four_type_scm();
  const PanelDataset ds = law_weighted_panel(scm);
  EstimationContext ctx(ds, exact_law_config());
  // off-arm trajectory: phi equals the level-1 prediction
  Trajectory off_arm = discrete_row(bits_to_index({1, 0}), bits_to_index({1, 0}), 5.0);
  const double phi = moment_phi(ctx, off_arm, {0, 1});
  const double base = ctx.outcome_models({0, 1}).values(0, 0);
  CHECK(phi == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("lasso and logistic pipeline smoke on the simulator") {
  LogisticLinearScm scm;
  scm.T = 2;
  scm.p = 3;
  const PanelDataset ds = simulate(scm, 2000, 2024);
  EstimatorConfig cfg;
  cfg.seed = 2024;
  EstimationContext ctx(ds, cfg);
  const EstimateReport rep = estimate_when_to_treat(ctx, 2);
  CHECK(std::isfinite(rep.point));
  CHECK(rep.std_error > 0.0);
  CHECK(std::abs(rep.point - 1.0) < 0.4);  // truth is exactly 1
  const std::string json = report_to_json(rep);
  CHECK(json.find("\"point\"") != std::string::npos);
  CHECK(json.find("\"ci\"") != std::string::npos);
}

TEST_CASE("nuisance audit table lists every fitted arm") {
  const DiscreteScm scm = staggered_four_type_scm();
  const PanelDataset ds = law_weighted_panel(scm);
  EstimationContext ctx(ds, exact_law_config());
  estimate_when_to_treat(ctx, 2);
  const std::string csv = nuisance_audit_csv(ctx);
  CHECK(csv.rfind("arm,row,fold,f1,f2,a1,a2,phi\n", 0) == 0);
  CHECK(csv.find("\n01,") != std::string::npos);  // the (0,1) arm
  CHECK(csv.find("\n00,") != std::string::npos);  // the shared all-zeros arm
}

TEST_CASE("counterfactual mean tracks the rollout oracle on the simulator") {
  LogisticLinearScm scm;
  scm.T = 2;
  scm.p = 3;
  const long n = 20000;
  const PanelDataset ds = simulate(scm, n, 515);
  EstimatorConfig cfg;
  cfg.seed = 515;
  cfg.regression.penalty_grid = 10;
  cfg.classification.penalty_grid = 10;
  EstimationContext ctx(ds, cfg);
  const McEstimate oracle = true_counterfactual_mean_mc(scm, {0, 0}, 400000, 99);
  const EstimateReport rep = estimate_counterfactual_mean(ctx, {0, 0});
  const double se = rep.std_error / std::sqrt(static_cast<double>(rep.n));
  CHECK(std::abs(rep.point - oracle.value) < 3.0 * (se + oracle.std_error));
}

TEST_CASE("ERM riesz mode runs the same pipeline") {
  LogisticLinearScm scm;
  scm.T = 2;
  scm.p = 2;
  const PanelDataset ds = simulate(scm, 2000, 31);
  EstimatorConfig cfg;
  cfg.seed = 31;
  cfg.erm_riesz = true;
  EstimationContext ctx(ds, cfg);
  const EstimateReport rep = estimate_when_to_treat(ctx, 2);
  CHECK(std::isfinite(rep.point));
  CHECK(std::abs(rep.point - 1.0) < 0.5);
}
