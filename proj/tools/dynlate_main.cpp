#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dynlate/cli_config.hpp"
#include "dynlate/panel_io.hpp"

namespace {

using namespace dynlate;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;
constexpr int kExitEstimability = 4;
constexpr int kExitInternal = 5;

int cmd_simulate(const std::string& config_path, const std::string& out_path,
                 std::optional<long> n_override, std::optional<std::uint64_t> seed_override) {
  const CliConfig cfg = load_cli_config(config_path);
  if (!cfg.simulate) throw ConfigError("config has no 'simulate' section (" + config_path + ")");
  SimulateConfig sim = *cfg.simulate;
  if (n_override) sim.n = *n_override;
  if (seed_override) sim.seed = *seed_override;
  if (sim.n < 1) throw ConfigError("n must be >= 1");

  const PanelDataset ds = simulate(sim.scm, sim.n, sim.seed);
  write_panel(ds, out_path);
  const ValidationReport report = validate_dataset(ds, true);
  std::cerr << "wrote " << ds.n() << " rows to " << out_path << " (one-sided violations: "
            << report.one_sided_violations << ", shape violations: " << report.shape_violations
            << ")\n";
  std::cout << "{\"rows\":" << ds.n() << ",\"T\":" << ds.T << ",\"p\":" << ds.p
            << ",\"one_sided_violations\":" << report.one_sided_violations << "}\n";
  return kExitOk;
}

int cmd_estimate(const std::string& config_path, std::string data_path,
                 std::optional<std::uint64_t> seed_override, const std::string& audit_path) {
  const CliConfig cfg = load_cli_config(config_path);
  if (!cfg.estimate) throw ConfigError("config has no 'estimate' section (" + config_path + ")");
  EstimateCommandConfig est = *cfg.estimate;
  if (seed_override) est.estimator.seed = *seed_override;
  if (data_path.empty()) data_path = est.data_path;
  if (data_path.empty()) throw ConfigError("no data path: pass --data or set estimate.data");

  PanelDataset ds;
  try {
    ds = read_panel(data_path);
  } catch (const ParseError& e) {
    throw ValidationError(e.what());
  }
  const ValidationReport report = validate_dataset(ds, est.require_one_sided);
  if (!report.ok()) {
    std::ostringstream msg;
    msg << "data validation failed: " << report.shape_violations << " shape and "
        << report.one_sided_violations << " one-sided violations";
    if (!report.one_sided_violation_rows.empty())
      msg << " (first one-sided offender: row " << report.one_sided_violation_rows.front() << ")";
    throw ValidationError(msg.str());
  }

  EstimationContext ctx(ds, est.estimator);
  std::cout << "[";
  bool first = true;
  for (const auto& e : est.estimands) {
    EstimateReport rep;
    switch (e.kind) {
      case EstimandSpecCfg::Kind::when_to_treat:
        rep = estimate_when_to_treat(ctx, e.t_star);
        break;
      case EstimandSpecCfg::Kind::mixture:
        rep = estimate_mixture_beta(ctx, e.z);
        break;
      case EstimandSpecCfg::Kind::always_treat_staggered:
        rep = estimate_always_treat_staggered(ctx);
        break;
      case EstimandSpecCfg::Kind::always_treat_strong:
        rep = estimate_always_treat_strong(ctx);
        break;
      case EstimandSpecCfg::Kind::always_treat_general_2p: {
        rep.estimand = e.name(ds.T);
        rep.point = estimate_always_treat_general_2p(ctx);
        rep.std_error = std::numeric_limits<double>::quiet_NaN();
        rep.ci_lo = rep.ci_hi = std::numeric_limits<double>::quiet_NaN();
        rep.n = ds.n();
        rep.denominator = 1.0;
        break;
      }
      case EstimandSpecCfg::Kind::counterfactual_mean:
        rep = estimate_counterfactual_mean(ctx, e.z);
        break;
      case EstimandSpecCfg::Kind::compliance_prob:
        rep = estimate_compliance_prob(ctx, e.z, e.d);
        break;
    }
    std::cout << (first ? "" : ",") << "\n  " << report_to_json(rep);
    first = false;
    std::cerr << rep.estimand << ": point=" << rep.point;
    if (rep.has_ci())
      std::cerr << " se(sigma)=" << rep.std_error << " ci=[" << rep.ci_lo << ", " << rep.ci_hi
                << "]";
    std::cerr << " n=" << rep.n << "\n";
  }
  std::cout << "\n]\n";
  if (!audit_path.empty()) {
    std::ofstream audit(audit_path);
    if (!audit) throw ConfigError("cannot open for writing: " + audit_path);
    audit << nuisance_audit_csv(ctx);
    std::cerr << "wrote nuisance audit table to " << audit_path << "\n";
  }
  return kExitOk;
}

int cmd_verify(int n_random, std::uint64_t seed) {
  return run_verification(std::cout, n_random, seed) ? kExitOk : 1;
}

int cmd_mc(const std::string& config_path, const std::string& out_path,
           std::optional<long> n_override, std::optional<std::uint64_t> seed_override) {
  const CliConfig cfg = load_cli_config(config_path);
  if (!cfg.mc) throw ConfigError("config has no 'mc' section (" + config_path + ")");
  ExperimentConfig mc = *cfg.mc;
  if (n_override) mc.n = *n_override;
  if (seed_override) mc.base_seed = *seed_override;

  const McSummary summary = run_mc(mc);
  const std::string csv = mc_summary_csv(summary);
  {
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot open for writing: " + out_path);
    out << csv;
  }
  {
    std::ofstream out(out_path + ".meta.json");
    if (!out) throw ConfigError("cannot open for writing: " + out_path + ".meta.json");
    out << mc_summary_sidecar_json(summary) << "\n";
  }
  std::cout << csv;
  std::cerr << "wrote " << out_path << " and " << out_path << ".meta.json ("
            << summary.failures.size() << " replication failures)\n";
  return kExitOk;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const EstimabilityError& e) {
    std::cerr << "estimability error: " << e.what() << "\n";
    return kExitEstimability;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynlate: dynamic treatment-regime LATE simulation, verification and estimation"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, audit_path;
  std::optional<long> n_override;
  std::optional<std::uint64_t> seed_override;
  int verify_count = 200;
  std::uint64_t verify_seed = 20260808;

  auto* sim = app.add_subcommand("simulate", "draw a synthetic panel and write the CSV");
  sim->add_option("--config", config_path, "JSON config file")->required();
  sim->add_option("--out", out_path, "output CSV path")->required();
  sim->add_option("--n", n_override, "override row count");
  sim->add_option("--seed", seed_override, "override seed");

  auto* est = app.add_subcommand("estimate", "run the configured estimands on a panel CSV");
  est->add_option("--config", config_path, "JSON config file")->required();
  est->add_option("--data", data_path, "panel CSV (overrides estimate.data)");
  est->add_option("--seed", seed_override, "override cross-fitting seed");
  est->add_option("--audit", audit_path, "write the per-row nuisance audit CSV here");

  auto* ver = app.add_subcommand("verify", "run the exact identification checks");
  ver->add_option("--count", verify_count, "number of random SCMs");
  ver->add_option("--seed", verify_seed, "random SCM seed");

  auto* mc = app.add_subcommand("mc", "run a replication study and write the results table");
  mc->add_option("--config", config_path, "JSON config file")->required();
  mc->add_option("--out", out_path, "output CSV path")->required();
  mc->add_option("--n", n_override, "override sample size per replication");
  mc->add_option("--seed", seed_override, "override base seed");

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed())
    return guarded([&] { return cmd_simulate(config_path, out_path, n_override, seed_override); });
  if (est->parsed())
    return guarded([&] { return cmd_estimate(config_path, data_path, seed_override, audit_path); });
  if (ver->parsed()) return guarded([&] { return cmd_verify(verify_count, verify_seed); });
  if (mc->parsed())
    return guarded([&] { return cmd_mc(config_path, out_path, n_override, seed_override); });
  return kExitConfig;
}
