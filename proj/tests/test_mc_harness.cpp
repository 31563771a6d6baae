#include <cmath>

#include "doctest.h"
#include "dynlate/mc_harness.hpp"

using namespace dynlate;

namespace {

EstimateReport fake_report(double point, double ci_lo, double ci_hi) {
  EstimateReport rep;
  rep.estimand = "fake";
  rep.point = point;
  rep.std_error = 1.0;
  rep.ci_lo = ci_lo;
  rep.ci_hi = ci_hi;
  rep.n = 100;
  return rep;
}

ExperimentConfig small_config() {
  ExperimentConfig config;
  config.scm.T = 2;
  config.scm.p = 2;
  config.scm.variant = DgpVariant::when_to_treat_dgp;
  config.n = 400;
  config.replications = 4;
  config.base_seed = 99;
  config.n_mc_truth = 100000;
  EstimandSpecCfg wtt;
  wtt.kind = EstimandSpecCfg::Kind::when_to_treat;
  wtt.t_star = 2;
  config.estimands = {wtt};
  config.estimator.regression.penalty_grid = 8;
  config.estimator.classification.penalty_grid = 8;
  return config;
}

}  // namespace

TEST_CASE("summarize: all estimates equal to the truth") {
  std::vector<EstimateReport> reports(3, fake_report(1.1, 1.0, 1.2));
  const EstimandSummary row = summarize(reports, 1.1);
  CHECK(row.rmse == doctest::Approx(0.0));
  CHECK(row.bias == doctest::Approx(0.0));
  CHECK(row.coverage == doctest::Approx(1.0));
}

TEST_CASE("summarize: symmetric errors with excluding intervals") {
  std::vector<EstimateReport> reports;
  reports.push_back(fake_report(1.0 + 0.3, 1.31, 1.4));  // CI excludes truth
  reports.push_back(fake_report(1.0 - 0.3, 0.6, 0.69));
  const EstimandSummary row = summarize(reports, 1.0);
  CHECK(row.rmse == doctest::Approx(0.3));
  CHECK(row.bias == doctest::Approx(0.0));
  CHECK(row.coverage == doctest::Approx(0.0));
}

TEST_CASE("summarize: the hand-worked example") {
  std::vector<EstimateReport> reports;
  reports.push_back(fake_report(1.0, 0.9, 1.1));
  reports.push_back(fake_report(1.2, 1.1, 1.3));
  const EstimandSummary row = summarize(reports, 1.1);
  CHECK(row.rmse == doctest::Approx(0.1));
  CHECK(row.bias == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(row.coverage == doctest::Approx(1.0));
  CHECK(row.mean_ci_width == doctest::Approx(0.2));
}

TEST_CASE("summarize with one replication: rmse equals bias") {
  std::vector<EstimateReport> reports{fake_report(1.4, 1.3, 1.5)};
  const EstimandSummary row = summarize(reports, 1.0);
  CHECK(row.rmse == doctest::Approx(0.4));
  CHECK(row.bias == doctest::Approx(0.4));
}

TEST_CASE("run_mc completes and aggregates a small study") {
  const ExperimentConfig config = small_config();
  const McSummary summary = run_mc(config);
  REQUIRE(summary.rows.size() == 1);
  const EstimandSummary& row = summary.rows[0];
  CHECK(row.estimand == "when_to_treat(0,1)");
  CHECK(row.truth == doctest::Approx(1.0).epsilon(1e-9));  // exact per-unit contrast
  CHECK(row.r_effective == 4);
  CHECK(row.failures == 0);
  CHECK(row.rmse < 1.0);
  const std::string csv = mc_summary_csv(summary);
  CHECK(csv.rfind("n,p,estimand,rmse,bias,coverage\n", 0) == 0);
  CHECK(csv.find("when_to_treat(0,1)") != std::string::npos);
}

TEST_CASE("run_mc is bit-identical across parallelism degrees") {
  ExperimentConfig config = small_config();
  config.parallelism = 1;
  const McSummary serial = run_mc(config);
  config.parallelism = 3;
  const McSummary threaded = run_mc(config);
  CHECK(mc_summary_csv(serial) == mc_summary_csv(threaded));
  CHECK(mc_summary_sidecar_json(serial, false) == mc_summary_sidecar_json(threaded, false));
}

TEST_CASE("run_mc throws when every replication fails") {
  ExperimentConfig config = small_config();
  config.n = 600;
  EstimandSpecCfg stag;
  stag.kind = EstimandSpecCfg::Kind::always_treat_staggered;
  config.estimands = {stag};  // when-to-treat data violates staggered compliance
  CHECK_THROWS_WITH_AS(run_mc(config), doctest::Contains("all replications failed"),
                       EstimabilityError);
}

TEST_CASE("config validation catches bad settings") {
  ExperimentConfig config = small_config();
  config.n_mc_truth = 10;
  CHECK_THROWS_AS(config.check(), ConfigError);
  config = small_config();
  config.replications = 0;
  CHECK_THROWS_AS(config.check(), ConfigError);
  config = small_config();
  config.estimands[0].t_star = 5;
  CHECK_THROWS_AS(config.check(), ConfigError);
}

TEST_CASE("sidecar json carries truths and confines the timestamp to metadata") {
  const McSummary summary = run_mc(small_config());
  const std::string with_time = mc_summary_sidecar_json(summary, true);
  const std::string without_time = mc_summary_sidecar_json(summary, false);
  CHECK(with_time.find("timestamp_unix_ms") != std::string::npos);
  CHECK(without_time.find("timestamp_unix_ms") == std::string::npos);
  CHECK(without_time.find("\"truth\"") != std::string::npos);
  CHECK(without_time.find("failure_log") != std::string::npos);
}
