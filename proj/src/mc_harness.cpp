#include "dynlate/mc_harness.hpp"

#include <atomic>
#include <cassert>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace dynlate {

namespace {

std::string vec_label(const std::vector<int>& bits) {
  std::string s = "(";
  for (size_t i = 0; i < bits.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(bits[i]);
  }
  return s + ")";
}

}  // namespace

std::string EstimandSpecCfg::name(int T) const {
  switch (kind) {
    case Kind::when_to_treat:
      return "when_to_treat" + vec_label(InterventionVector::when_to_treat(T, t_star).bits);
    case Kind::mixture:
      return "mixture" + vec_label(z);
    case Kind::always_treat_staggered:
      return "always_treat_staggered";
    case Kind::always_treat_strong:
      return "always_treat_strong";
    case Kind::always_treat_general_2p:
      return "always_treat_general_2p";
    case Kind::counterfactual_mean:
      return "counterfactual_mean" + vec_label(z);
    case Kind::compliance_prob:
      return "compliance_prob(z=" + vec_label(z) + ",d=" + vec_label(d) + ")";
  }
  return "unknown";
}

void ExperimentConfig::check() const {
  check_scm(scm);
  if (n < 1) throw ConfigError("n must be >= 1");
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (estimands.empty()) throw ConfigError("estimand list is empty");
  if (n_mc_truth < 100000) throw ConfigError("truth oracle n_mc must be >= 1e5");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  for (const auto& e : estimands) {
    if (e.kind == EstimandSpecCfg::Kind::when_to_treat &&
        (e.t_star < 1 || e.t_star > scm.T))
      throw ConfigError("when_to_treat period out of range");
    if ((e.kind == EstimandSpecCfg::Kind::mixture ||
         e.kind == EstimandSpecCfg::Kind::counterfactual_mean ||
         e.kind == EstimandSpecCfg::Kind::compliance_prob) &&
        static_cast<int>(e.z.size()) != scm.T)
      throw ConfigError("estimand z vector must have length T");
    if (e.kind == EstimandSpecCfg::Kind::compliance_prob &&
        static_cast<int>(e.d.size()) != scm.T)
      throw ConfigError("estimand d vector must have length T");
    if ((e.kind == EstimandSpecCfg::Kind::always_treat_strong ||
         e.kind == EstimandSpecCfg::Kind::always_treat_general_2p) &&
        scm.T != 2)
      throw ConfigError("two-period always-treat estimands require T=2");
  }
}

EstimandSummary summarize(const std::vector<EstimateReport>& estimates, double truth) {
  if (estimates.empty()) throw ConfigError("summarize needs at least one estimate");
  EstimandSummary row;
  row.estimand = estimates.front().estimand;
  row.truth = truth;
  row.r_effective = static_cast<int>(estimates.size());

  double sq_err = 0.0, mean_point = 0.0;
  double covered = 0.0, width = 0.0;
  int with_ci = 0;
  for (const auto& est : estimates) {
    sq_err += (est.point - truth) * (est.point - truth);
    mean_point += est.point;
    if (est.has_ci()) {
      ++with_ci;
      covered += (est.ci_lo <= truth && truth <= est.ci_hi) ? 1.0 : 0.0;
      width += est.ci_hi - est.ci_lo;
    }
  }
  const double R = static_cast<double>(estimates.size());
  mean_point /= R;
  row.rmse = std::sqrt(sq_err / R);
  row.bias = std::abs(mean_point - truth);
  if (with_ci > 0) {
    row.coverage = covered / with_ci;
    row.mean_ci_width = width / with_ci;
  } else {
    row.coverage = std::numeric_limits<double>::quiet_NaN();
    row.mean_ci_width = std::numeric_limits<double>::quiet_NaN();
  }

  // rmse^2 = bias^2 + variance of the points, up to float error.
  double var = 0.0;
  for (const auto& est : estimates) var += (est.point - mean_point) * (est.point - mean_point);
  var /= R;
  if (std::abs(row.rmse * row.rmse - row.bias * row.bias - var) >
      1e-12 * (1.0 + row.rmse * row.rmse))
    throw std::logic_error("rmse decomposition violated in summarize");
  return row;
}

namespace {

McEstimate estimand_truth(const ExperimentConfig& config, const EstimandSpecCfg& e) {
  const int T = config.scm.T;
  const std::uint64_t seed = config.base_seed;
  switch (e.kind) {
    case EstimandSpecCfg::Kind::when_to_treat: {
      const std::vector<int> z = InterventionVector::when_to_treat(T, e.t_star).bits;
      return true_late_mc(config.scm, z, z, config.n_mc_truth, seed);
    }
    case EstimandSpecCfg::Kind::mixture:
      return true_mixture_mc(config.scm, e.z, config.n_mc_truth, seed);
    case EstimandSpecCfg::Kind::always_treat_staggered:
    case EstimandSpecCfg::Kind::always_treat_strong:
    case EstimandSpecCfg::Kind::always_treat_general_2p: {
      const std::vector<int> ones(T, 1);
      return true_late_mc(config.scm, ones, ones, config.n_mc_truth, seed);
    }
    case EstimandSpecCfg::Kind::counterfactual_mean:
      return true_counterfactual_mean_mc(config.scm, e.z, config.n_mc_truth, seed);
    case EstimandSpecCfg::Kind::compliance_prob:
      return true_compliance_prob_mc(config.scm, e.z, e.d, config.n_mc_truth, seed);
  }
  throw ConfigError("unknown estimand kind");
}

EstimateReport run_estimand(EstimationContext& ctx, const EstimandSpecCfg& e, int T) {
  switch (e.kind) {
    case EstimandSpecCfg::Kind::when_to_treat:
      return estimate_when_to_treat(ctx, e.t_star);
    case EstimandSpecCfg::Kind::mixture:
      return estimate_mixture_beta(ctx, e.z);
    case EstimandSpecCfg::Kind::always_treat_staggered:
      return estimate_always_treat_staggered(ctx);
    case EstimandSpecCfg::Kind::always_treat_strong:
      return estimate_always_treat_strong(ctx);
    case EstimandSpecCfg::Kind::always_treat_general_2p: {
      EstimateReport report;
      report.estimand = e.name(T);
      report.point = estimate_always_treat_general_2p(ctx);
      report.std_error = std::numeric_limits<double>::quiet_NaN();
      report.ci_lo = report.ci_hi = std::numeric_limits<double>::quiet_NaN();
      report.n = ctx.design().n;
      report.denominator = 1.0;
      return report;
    }
    case EstimandSpecCfg::Kind::counterfactual_mean:
      return estimate_counterfactual_mean(ctx, e.z);
    case EstimandSpecCfg::Kind::compliance_prob:
      return estimate_compliance_prob(ctx, e.z, e.d);
  }
  throw ConfigError("unknown estimand kind");
}

struct ReplicationResult {
  std::vector<std::optional<EstimateReport>> reports;  // per estimand
  std::vector<std::string> errors;                     // per estimand, empty if ok
};

ReplicationResult run_replication(const ExperimentConfig& config, int r) {
  const std::uint64_t seed = config.base_seed ^ static_cast<std::uint64_t>(r);
  const PanelDataset ds = simulate(config.scm, config.n, seed);
  EstimatorConfig est_cfg = config.estimator;
  est_cfg.seed = seed;
  EstimationContext ctx(ds, est_cfg);
  ReplicationResult result;
  result.reports.resize(config.estimands.size());
  result.errors.resize(config.estimands.size());
  for (size_t j = 0; j < config.estimands.size(); ++j) {
    try {
      result.reports[j] = run_estimand(ctx, config.estimands[j], config.scm.T);
    } catch (const std::exception& ex) {
      result.errors[j] = ex.what();
    }
  }
  return result;
}

}  // namespace

McSummary run_mc(const ExperimentConfig& config) {
  config.check();
  McSummary summary;
  summary.n = config.n;
  summary.p = config.scm.p;
  summary.T = config.scm.T;
  summary.replications = config.replications;
  summary.base_seed = config.base_seed;

  std::vector<McEstimate> truths;
  truths.reserve(config.estimands.size());
  for (const auto& e : config.estimands) truths.push_back(estimand_truth(config, e));

  std::vector<ReplicationResult> results(config.replications);
  const int threads =
      std::max(1, std::min<int>(config.parallelism, config.replications));
  if (threads == 1) {
    for (int r = 0; r < config.replications; ++r) results[r] = run_replication(config, r + 1);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&]() {
        for (;;) {
          const int r = next.fetch_add(1);
          if (r >= config.replications) return;
          results[r] = run_replication(config, r + 1);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  for (size_t j = 0; j < config.estimands.size(); ++j) {
    std::vector<EstimateReport> good;
    int failures = 0;
    for (int r = 0; r < config.replications; ++r) {
      if (results[r].reports[j]) {
        good.push_back(*results[r].reports[j]);
      } else {
        ++failures;
        summary.failures.push_back(
            {r + 1, config.estimands[j].name(config.scm.T), results[r].errors[j]});
      }
    }
    if (good.empty())
      throw EstimabilityError("all replications failed for " +
                              config.estimands[j].name(config.scm.T) + ": " +
                              summary.failures.back().message);
    EstimandSummary row = summarize(good, truths[j].value);
    row.estimand = config.estimands[j].name(config.scm.T);
    row.truth_se = truths[j].std_error;
    row.failures = failures;
    summary.rows.push_back(std::move(row));
  }
  return summary;
}

std::string mc_summary_csv(const McSummary& summary) {
  std::ostringstream out;
  out << "n,p,estimand,rmse,bias,coverage\n";
  char buf[64];
  for (const auto& row : summary.rows) {
    out << summary.n << "," << summary.p << "," << row.estimand;
    std::snprintf(buf, sizeof(buf), ",%.6g,%.6g,", row.rmse, row.bias);
    out << buf;
    if (std::isnan(row.coverage)) {
      out << "NA";
    } else {
      std::snprintf(buf, sizeof(buf), "%.6g", row.coverage);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

std::string mc_summary_sidecar_json(const McSummary& summary, bool with_timestamp) {
  nlohmann::json doc;
  doc["n"] = summary.n;
  doc["p"] = summary.p;
  doc["T"] = summary.T;
  doc["replications"] = summary.replications;
  doc["base_seed"] = summary.base_seed;
  doc["truth_seed"] = summary.base_seed;
  doc["replication_seeds"] = nlohmann::json::array();
  for (int r = 1; r <= summary.replications; ++r)
    doc["replication_seeds"].push_back(summary.base_seed ^ static_cast<std::uint64_t>(r));
  doc["estimands"] = nlohmann::json::array();
  for (const auto& row : summary.rows) {
    nlohmann::json jr;
    jr["estimand"] = row.estimand;
    jr["truth"] = row.truth;
    jr["truth_se"] = row.truth_se;
    jr["rmse"] = row.rmse;
    jr["bias"] = row.bias;
    if (std::isnan(row.coverage)) {
      jr["coverage"] = nullptr;
      jr["mean_ci_width"] = nullptr;
    } else {
      jr["coverage"] = row.coverage;
      jr["mean_ci_width"] = row.mean_ci_width;
    }
    jr["failures"] = row.failures;
    jr["r_effective"] = row.r_effective;
    doc["estimands"].push_back(jr);
  }
  doc["failure_log"] = nlohmann::json::array();
  for (const auto& f : summary.failures) {
    doc["failure_log"].push_back(
        {{"replication", f.replication}, {"estimand", f.estimand}, {"message", f.message}});
  }
  doc["metadata"] = nlohmann::json::object();
  if (with_timestamp) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    doc["metadata"]["timestamp_unix_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  }
  return doc.dump(2);
}

}  // namespace dynlate
