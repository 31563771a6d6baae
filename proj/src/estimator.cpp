#include "dynlate/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace dynlate {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("quantile level must lie in (0,1)");
  // Acklam's rational approximation, then one Halley refinement with erfc.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

std::string report_to_json(const EstimateReport& report) {
  nlohmann::json doc;
  doc["estimand"] = report.estimand;
  doc["point"] = report.point;
  if (std::isfinite(report.std_error)) {
    doc["se"] = report.std_error;
    doc["ci"] = {report.ci_lo, report.ci_hi};
  } else {
    doc["se"] = nullptr;
    doc["ci"] = nullptr;
  }
  doc["n"] = report.n;
  doc["denom"] = report.denominator;
  doc["flags"] = report.flags;
  return doc.dump();
}

double phi_from_values(const Eigen::Ref<const Eigen::VectorXd>& f,
                       const Eigen::Ref<const Eigen::VectorXd>& a, double y) {
  const int T = static_cast<int>(f.size());
  double phi = f[0];
  for (int t = 1; t <= T; ++t) {
    const double next = t == T ? y : f[t];
    phi += a[t - 1] * (next - f[t - 1]);
  }
  return phi;
}

double psi_from_values(const Eigen::Ref<const Eigen::VectorXd>& g,
                       const Eigen::Ref<const Eigen::VectorXd>& a, double indicator) {
  return phi_from_values(g, a, indicator);
}

double rho_from_values(double q, const Eigen::Ref<const Eigen::VectorXd>& f_d1,
                       const Eigen::Ref<const Eigen::VectorXd>& gamma, double y) {
  const int T = static_cast<int>(gamma.size());
  double rho = q + gamma[0] * (f_d1[0] - q);
  for (int t = 2; t <= T; ++t) {
    const double next = t == T ? y : f_d1[t - 1];
    rho += gamma[t - 1] * (next - f_d1[t - 2]);
  }
  return rho;
}

double pi_from_values(double p, double a1, double d1) { return p + a1 * (d1 - p); }

namespace {

std::string bits_key(const std::vector<int>& bits) {
  std::string key;
  for (int b : bits) key += static_cast<char>('0' + b);
  return key;
}

std::string event_key(const TerminalTarget& event) {
  switch (event.kind) {
    case TerminalTarget::Kind::outcome:
      return "y";
    case TerminalTarget::Kind::event_not_zero:
      return "nz";
    default:
      return "d=" + bits_key(event.d_bits);
  }
}

std::vector<int> zeros_vec(int T) { return std::vector<int>(T, 0); }

}  // namespace

EstimationContext::EstimationContext(const PanelDataset& ds, EstimatorConfig cfg)
    : cfg_(std::move(cfg)), design_(PanelDesign::build(ds)),
      plan_(CrossFitPlan::make(design_.n, cfg_.folds, cfg_.seed)) {
  if (!(cfg_.confidence_level > 0.0 && cfg_.confidence_level < 1.0))
    throw ConfigError("confidence level must lie in (0,1)");
}

const PropensityModels& EstimationContext::propensities() {
  if (!props_) props_ = fit_propensities(design_, plan_, cfg_.classification);
  return *props_;
}

const NestedModels& EstimationContext::outcome_models(const std::vector<int>& z) {
  const std::string key = bits_key(z);
  auto it = outcome_cache_.find(key);
  if (it == outcome_cache_.end()) {
    it = outcome_cache_
             .emplace(key, fit_nested_outcome(design_, plan_, z, cfg_.regression,
                                              cfg_.classification))
             .first;
  }
  return it->second;
}

const NestedModels& EstimationContext::treatment_models(const std::vector<int>& z,
                                                        const TerminalTarget& event) {
  const std::string key = bits_key(z) + "|" + event_key(event);
  auto it = treatment_cache_.find(key);
  if (it == treatment_cache_.end()) {
    it = treatment_cache_
             .emplace(key, fit_nested_treatment(design_, plan_, z, event, cfg_.regression,
                                                cfg_.classification))
             .first;
  }
  return it->second;
}

const StaggeredNuisances& EstimationContext::staggered_nuisances() {
  if (!staggered_)
    staggered_ = fit_staggered_nuisances(design_, plan_, cfg_.regression, cfg_.classification);
  return *staggered_;
}

const Eigen::MatrixXd& EstimationContext::riesz_values(const std::vector<int>& z) {
  const std::string key = bits_key(z);
  auto it = riesz_cache_.find(key);
  if (it == riesz_cache_.end()) {
    Eigen::MatrixXd values;
    if (cfg_.erm_riesz) {
      auto em = erm_cache_.find(key);
      if (em == erm_cache_.end()) {
        em = erm_cache_.emplace(key, fit_riesz_erm(design_, plan_, z, cfg_.regression)).first;
      }
      values = em->second.values;
      // The ERM representer does not carry the arm indicator; zero it out
      // off-arm so the telescoping corrections vanish exactly as in the
      // closed form.
      for (long i = 0; i < design_.n; ++i) {
        bool on_arm = true;
        for (int t = 1; t <= design_.T; ++t) {
          if (static_cast<int>(design_.z(i, t - 1)) != z[t - 1]) on_arm = false;
          if (!on_arm) values(i, t - 1) = 0.0;
        }
      }
    } else {
      values = plugin_riesz_values(design_, propensities(), ArmRule::fixed(z), cfg_.classification);
    }
    it = riesz_cache_.emplace(key, std::move(values)).first;
  }
  return it->second;
}

const Eigen::MatrixXd& EstimationContext::staggered_gamma() {
  if (!gamma_)
    gamma_ = plugin_riesz_values(design_, propensities(), ArmRule::staggered(design_.T),
                                 cfg_.classification);
  return *gamma_;
}

Eigen::VectorXd EstimationContext::phi_values(const std::vector<int>& z) {
  const NestedModels& f = outcome_models(z);
  const Eigen::MatrixXd& a = riesz_values(z);
  Eigen::VectorXd phi(design_.n);
  for (long i = 0; i < design_.n; ++i)
    phi[i] = phi_from_values(f.values.row(i).transpose(), a.row(i).transpose(), design_.y[i]);
  return phi;
}

Eigen::VectorXd EstimationContext::psi_values(const std::vector<int>& z,
                                              const TerminalTarget& event) {
  const NestedModels& g = treatment_models(z, event);
  const Eigen::MatrixXd& a = riesz_values(z);
  const Eigen::VectorXd indicator = event.values(design_);
  Eigen::VectorXd psi(design_.n);
  for (long i = 0; i < design_.n; ++i)
    psi[i] = psi_from_values(g.values.row(i).transpose(), a.row(i).transpose(), indicator[i]);
  return psi;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> EstimationContext::rho_pi_values() {
  const StaggeredNuisances& stag = staggered_nuisances();
  const Eigen::MatrixXd& gamma = staggered_gamma();
  const int T = design_.T;
  Eigen::VectorXd rho(design_.n), pi(design_.n);
  for (long i = 0; i < design_.n; ++i) {
    const Eigen::VectorXd f_d1 = stag.f_d1.values.row(i).segment(1, T - 1).transpose();
    rho[i] = rho_from_values(stag.q.values[i], f_d1, gamma.row(i).transpose(), design_.y[i]);
    pi[i] = pi_from_values(stag.p.values[i], gamma(i, 0), design_.d(i, 0));
  }
  return {rho, pi};
}

double EstimationContext::weighted_mean(const Eigen::VectorXd& v) const {
  if (design_.weights.size() == 0) return v.mean();
  return v.dot(design_.weights) / design_.weights.sum();
}

std::vector<double> EstimationContext::fold_means(const Eigen::VectorXd& v) const {
  std::vector<double> sums(plan_.K, 0.0), mass(plan_.K, 0.0);
  for (long i = 0; i < design_.n; ++i) {
    const int k = plan_.fold_of_row[i];
    const double w = design_.weight(i);
    sums[k] += w * v[i];
    mass[k] += w;
  }
  std::vector<double> means(plan_.K, 0.0);
  for (int k = 0; k < plan_.K; ++k) means[k] = mass[k] > 0.0 ? sums[k] / mass[k] : 0.0;
  return means;
}

std::vector<std::vector<int>> EstimationContext::fitted_outcome_arms() const {
  std::vector<std::vector<int>> arms;
  for (const auto& [key, models] : outcome_cache_) {
    std::vector<int> bits;
    bits.reserve(key.size());
    for (char c : key) bits.push_back(c - '0');
    arms.push_back(std::move(bits));
  }
  return arms;
}

std::string nuisance_audit_csv(EstimationContext& ctx) {
  const PanelDesign& design = ctx.design();
  const int T = design.T;
  std::ostringstream out;
  out << "arm,row,fold";
  for (int t = 1; t <= T; ++t) out << ",f" << t;
  for (int t = 1; t <= T; ++t) out << ",a" << t;
  out << ",phi\n";
  char buf[40];
  for (const auto& arm : ctx.fitted_outcome_arms()) {
    std::string label;
    for (int b : arm) label += static_cast<char>('0' + b);
    const NestedModels& f = ctx.outcome_models(arm);
    const Eigen::MatrixXd& a = ctx.riesz_values(arm);
    for (long i = 0; i < design.n; ++i) {
      out << label << "," << i << "," << ctx.plan().fold_of_row[i];
      for (int t = 0; t < T; ++t) {
        std::snprintf(buf, sizeof(buf), ",%.17g", f.values(i, t));
        out << buf;
      }
      for (int t = 0; t < T; ++t) {
        std::snprintf(buf, sizeof(buf), ",%.17g", a(i, t));
        out << buf;
      }
      std::snprintf(buf, sizeof(buf), ",%.17g",
                    phi_from_values(f.values.row(i).transpose(), a.row(i).transpose(),
                                    design.y[i]));
      out << buf << "\n";
    }
  }
  return out.str();
}

double moment_phi(EstimationContext& ctx, const Trajectory& tr, const std::vector<int>& z) {
  const int T = tr.periods();
  const NestedModels& f = ctx.outcome_models(z);
  const PropensityModels& props = ctx.propensities();
  const int K = ctx.plan().K;
  Eigen::VectorXd f_vals = Eigen::VectorXd::Zero(T);
  Eigen::VectorXd a_vals = Eigen::VectorXd::Zero(T);
  for (int t = 1; t <= T; ++t) {
    const Eigen::VectorXd h = history_features(tr, t).features;
    double f_avg = 0.0;
    for (int k = 0; k < K; ++k) f_avg += predict_one(f.model[k][t - 1], h);
    f_vals[t - 1] = f_avg / K;
  }
  Eigen::VectorXd a_acc = Eigen::VectorXd::Zero(T);
  for (int k = 0; k < K; ++k)
    a_acc += riesz_weights_plugin(props, k, tr, z, ctx.config().classification);
  a_vals = a_acc / K;
  return phi_from_values(f_vals, a_vals, tr.y);
}

namespace {

struct MomentStats {
  double mean = 0.0;
  double sd = 0.0;
};

MomentStats weighted_stats(const PanelDesign& design, const Eigen::VectorXd& v) {
  MomentStats stats;
  const double total = design.total_weight();
  double mean = 0.0;
  for (long i = 0; i < design.n; ++i) mean += design.weight(i) * v[i];
  mean /= total;
  double var = 0.0;
  for (long i = 0; i < design.n; ++i) {
    const double dev = v[i] - mean;
    var += design.weight(i) * dev * dev;
  }
  stats.mean = mean;
  stats.sd = std::sqrt(std::max(var / total, 0.0));
  return stats;
}

EstimateReport make_report(const EstimationContext& ctx, std::string name, double point,
                           double sigma, double denom, std::vector<double> fold_means,
                           std::vector<std::string> flags) {
  EstimateReport report;
  report.estimand = std::move(name);
  report.point = point;
  report.std_error = sigma;
  report.n = ctx.design().n;
  report.denominator = denom;
  report.fold_numerator_means = std::move(fold_means);
  report.flags = std::move(flags);
  if (std::isfinite(sigma)) {
    const double q = normal_quantile(0.5 + ctx.config().confidence_level / 2.0);
    const double half = q * sigma / std::sqrt(static_cast<double>(report.n));
    report.ci_lo = point - half;
    report.ci_hi = point + half;
  } else {
    report.ci_lo = report.ci_hi = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

void flag_large_weights(const Eigen::MatrixXd& a, std::vector<std::string>& flags) {
  if (a.cwiseAbs().maxCoeff() > 100.0) {
    if (std::find(flags.begin(), flags.end(), "large_riesz_weight") == flags.end())
      flags.push_back("large_riesz_weight");
  }
}

std::string vec_label(const std::vector<int>& bits) {
  std::string s = "(";
  for (size_t i = 0; i < bits.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(bits[i]);
  }
  return s + ")";
}

// Ratio estimator tau = mean(num)/mean(den) with
// sigma^2 = mean(den)^-2 * mean((num - tau*den)^2).
EstimateReport ratio_report(EstimationContext& ctx, const std::string& name,
                            const Eigen::VectorXd& numerator, const Eigen::VectorXd& denominator,
                            std::vector<std::string> flags) {
  const PanelDesign& design = ctx.design();
  const double den_mean = ctx.weighted_mean(denominator);
  if (den_mean <= ctx.config().denom_floor)
    throw EstimabilityError("complier mass too small (mean " + std::to_string(den_mean) + ")");
  if (den_mean < 0.05) flags.push_back("small_denominator");
  const double num_mean = ctx.weighted_mean(numerator);
  const double tau = num_mean / den_mean;
  Eigen::VectorXd resid = numerator - tau * denominator;
  double mean_sq = 0.0;
  for (long i = 0; i < design.n; ++i) mean_sq += design.weight(i) * resid[i] * resid[i];
  mean_sq /= design.total_weight();
  const double sigma = std::sqrt(mean_sq) / den_mean;
  return make_report(ctx, name, tau, sigma, den_mean, ctx.fold_means(numerator),
                     std::move(flags));
}

}  // namespace

EstimateReport estimate_counterfactual_mean(EstimationContext& ctx, const std::vector<int>& z) {
  const Eigen::VectorXd phi = ctx.phi_values(z);
  std::vector<std::string> flags;
  flag_large_weights(ctx.riesz_values(z), flags);
  const MomentStats stats = weighted_stats(ctx.design(), phi);
  return make_report(ctx, "counterfactual_mean" + vec_label(z), stats.mean, stats.sd, 1.0,
                     ctx.fold_means(phi), std::move(flags));
}

EstimateReport estimate_compliance_prob(EstimationContext& ctx, const std::vector<int>& z,
                                        const std::vector<int>& d) {
  const Eigen::VectorXd psi = ctx.psi_values(z, TerminalTarget::event(d));
  std::vector<std::string> flags;
  flag_large_weights(ctx.riesz_values(z), flags);
  const MomentStats stats = weighted_stats(ctx.design(), psi);
  return make_report(ctx, "compliance_prob(z=" + vec_label(z) + ",d=" + vec_label(d) + ")",
                     stats.mean, stats.sd, 1.0, ctx.fold_means(psi), std::move(flags));
}

EstimateReport estimate_when_to_treat(EstimationContext& ctx, int t_star) {
  const int T = ctx.design().T;
  if (t_star < 1 || t_star > T)
    throw ConfigError("t_star must lie in 1.." + std::to_string(T));
  const std::vector<int> z = InterventionVector::when_to_treat(T, t_star).bits;
  const Eigen::VectorXd phi_z = ctx.phi_values(z);
  const Eigen::VectorXd phi_0 = ctx.phi_values(zeros_vec(T));
  const Eigen::VectorXd psi = ctx.psi_values(z, TerminalTarget::event(z));
  std::vector<std::string> flags;
  flag_large_weights(ctx.riesz_values(z), flags);
  flag_large_weights(ctx.riesz_values(zeros_vec(T)), flags);
  return ratio_report(ctx, "when_to_treat" + vec_label(z), phi_z - phi_0, psi, std::move(flags));
}

EstimateReport estimate_mixture_beta(EstimationContext& ctx, const std::vector<int>& z) {
  const int T = ctx.design().T;
  const Eigen::VectorXd phi_z = ctx.phi_values(z);
  const Eigen::VectorXd phi_0 = ctx.phi_values(zeros_vec(T));
  const Eigen::VectorXd psi = ctx.psi_values(z, TerminalTarget::event_not_zero());
  std::vector<std::string> flags;
  flag_large_weights(ctx.riesz_values(z), flags);
  return ratio_report(ctx, "mixture" + vec_label(z), phi_z - phi_0, psi, std::move(flags));
}

EstimateReport estimate_always_treat_strong(EstimationContext& ctx) {
  const PanelDesign& design = ctx.design();
  if (design.T != 2) throw ConfigError("the strong-restriction estimator requires T=2");
  const std::vector<int> ones{1, 1}, e1{1, 0}, e2{0, 1}, zeros{0, 0};

  const Eigen::VectorXd phi_11 = ctx.phi_values(ones);
  const Eigen::VectorXd phi_0 = ctx.phi_values(zeros);
  const Eigen::VectorXd phi_10 = ctx.phi_values(e1);
  const Eigen::VectorXd phi_01 = ctx.phi_values(e2);
  const Eigen::VectorXd psi_mix = ctx.psi_values(ones, TerminalTarget::event_not_zero());
  const Eigen::VectorXd psi_10 = ctx.psi_values(e1, TerminalTarget::event(e1));
  const Eigen::VectorXd psi_01 = ctx.psi_values(e2, TerminalTarget::event(e2));
  const Eigen::VectorXd c_10 = ctx.psi_values(ones, TerminalTarget::event(e1));
  const Eigen::VectorXd c_01 = ctx.psi_values(ones, TerminalTarget::event(e2));
  const Eigen::VectorXd c_11 = ctx.psi_values(ones, TerminalTarget::event(ones));

  const double mix_den = ctx.weighted_mean(psi_mix);
  const double den_10 = ctx.weighted_mean(psi_10);
  const double den_01 = ctx.weighted_mean(psi_01);
  if (std::min({mix_den, den_10, den_01}) <= ctx.config().denom_floor)
    throw EstimabilityError("complier mass too small for a strong-restriction input");
  const double beta = ctx.weighted_mean(phi_11 - phi_0) / mix_den;
  const double tau_10 = ctx.weighted_mean(phi_10 - phi_0) / den_10;
  const double tau_01 = ctx.weighted_mean(phi_01 - phi_0) / den_01;
  const double g_10 = ctx.weighted_mean(c_10);
  const double g_01 = ctx.weighted_mean(c_01);
  const double g_11 = ctx.weighted_mean(c_11);
  if (g_11 <= ctx.config().denom_floor)
    throw EstimabilityError("always-treat complier mass too small");
  const double g_sum = g_10 + g_01 + g_11;
  const double tau_11 = (beta * g_sum - tau_10 * g_10 - tau_01 * g_01) / g_11;

  // Delta method over the joint influence values of (beta, tau_10, tau_01,
  // g_10, g_01, g_11).
  Eigen::VectorXd influence(design.n);
  for (long i = 0; i < design.n; ++i) {
    const double if_beta = (phi_11[i] - phi_0[i] - beta * psi_mix[i]) / mix_den;
    const double if_t10 = (phi_10[i] - phi_0[i] - tau_10 * psi_10[i]) / den_10;
    const double if_t01 = (phi_01[i] - phi_0[i] - tau_01 * psi_01[i]) / den_01;
    const double if_g10 = c_10[i] - g_10;
    const double if_g01 = c_01[i] - g_01;
    const double if_g11 = c_11[i] - g_11;
    influence[i] = (g_sum / g_11) * if_beta - (g_10 / g_11) * if_t10 - (g_01 / g_11) * if_t01 +
                   ((beta - tau_10) / g_11) * if_g10 + ((beta - tau_01) / g_11) * if_g01 +
                   ((beta - tau_11) / g_11) * if_g11;
  }
  const MomentStats stats = weighted_stats(design, influence);
  std::vector<std::string> flags;
  flag_large_weights(ctx.riesz_values(ones), flags);
  if (g_10 + g_01 < 1e-3) flags.push_back("degenerate_weights");
  return make_report(ctx, "always_treat_strong", tau_11, stats.sd, g_11,
                     ctx.fold_means(phi_11 - phi_0), std::move(flags));
}

EstimateReport estimate_always_treat_staggered(EstimationContext& ctx) {
  const PanelDesign& design = ctx.design();
  if (design.T < 2) throw ConfigError("the staggered estimator requires T >= 2");
  {
    PanelDataset probe;  // staggered pathwise validation on the design arrays
    probe.T = design.T;
    probe.p = 0;
    long offender = -1;
    for (long i = 0; i < design.n && offender < 0; ++i) {
      if (design.d(i, 0) == 1.0 && design.z(i, 0) == 1.0) {
        for (int t = 1; t < design.T; ++t) {
          if (design.z(i, t) == 1.0 && design.d(i, t) == 0.0) {
            offender = i;
            break;
          }
        }
      }
    }
    if (offender >= 0)
      throw EstimabilityError("staggered compliance violated (first offending row " +
                              std::to_string(offender) + ")");
  }
  const auto [rho, pi] = ctx.rho_pi_values();
  const Eigen::VectorXd phi_0 = ctx.phi_values(zeros_vec(design.T));
  std::vector<std::string> flags;
  flag_large_weights(ctx.staggered_gamma(), flags);
  flag_large_weights(ctx.riesz_values(zeros_vec(design.T)), flags);
  return ratio_report(ctx, "always_treat_staggered", rho - phi_0, pi, std::move(flags));
}

double estimate_always_treat_general_2p(EstimationContext& ctx) {
  const PanelDesign& design = ctx.design();
  if (design.T != 2) throw ConfigError("the general always-treat estimator requires T=2");
  const std::vector<int> ones{1, 1}, e1{1, 0}, zeros{0, 0};

  const StaggeredNuisances& stag = ctx.staggered_nuisances();
  const Eigen::VectorXd& q = stag.q.values;
  const Eigen::VectorXd f1_0 = ctx.outcome_models(zeros).values.col(0);
  const Eigen::VectorXd f1_10 = ctx.outcome_models(e1).values.col(0);
  const Eigen::VectorXd g1_10 = ctx.treatment_models(e1, TerminalTarget::event(e1)).values.col(0);
  const Eigen::VectorXd r_10 = ctx.treatment_models(ones, TerminalTarget::event(e1)).values.col(0);
  const Eigen::VectorXd r_11 =
      ctx.treatment_models(ones, TerminalTarget::event(ones)).values.col(0);

  Eigen::VectorXd numerator(design.n);
  for (long i = 0; i < design.n; ++i) {
    const double compliance = std::max(g1_10[i], ctx.config().denom_floor);
    const double tau_10_at_s0 = (f1_10[i] - f1_0[i]) / compliance;
    numerator[i] = (q[i] - f1_0[i]) - tau_10_at_s0 * r_10[i];
  }
  const double denominator = ctx.weighted_mean(r_11);
  if (denominator <= ctx.config().denom_floor)
    throw EstimabilityError("always-treat complier mass too small");
  return ctx.weighted_mean(numerator) / denominator;
}

double conditional_late(EstimationContext& ctx, const Eigen::VectorXd& s0,
                        const ConditionalLateSpec& spec) {
  const int T = ctx.design().T;
  const int K = ctx.plan().K;
  auto fold_average = [&](const std::vector<FittedModel>& models) {
    double total = 0.0;
    for (const FittedModel& m : models) total += predict_one(m, s0);
    return total / static_cast<double>(models.size());
  };
  auto level1_models = [&](const NestedModels& nested) {
    std::vector<FittedModel> out;
    out.reserve(K);
    for (int k = 0; k < K; ++k) out.push_back(nested.model[k][0]);
    return out;
  };

  double numerator, denominator;
  if (spec.kind == ConditionalLateSpec::Kind::when_to_treat) {
    const std::vector<int> z = InterventionVector::when_to_treat(T, spec.t_star).bits;
    numerator = fold_average(level1_models(ctx.outcome_models(z))) -
                fold_average(level1_models(ctx.outcome_models(zeros_vec(T))));
    denominator = fold_average(level1_models(ctx.treatment_models(z, TerminalTarget::event(z))));
  } else {
    const StaggeredNuisances& stag = ctx.staggered_nuisances();
    numerator = fold_average(stag.q.model) -
                fold_average(level1_models(ctx.outcome_models(zeros_vec(T))));
    denominator = fold_average(stag.p.model);
  }
  if (denominator < ctx.config().denom_floor)
    throw EstimabilityError("conditional compliance too small at s0 (predicted " +
                            std::to_string(denominator) + ")");
  return numerator / denominator;
}

EstimateReport estimate_when_to_treat(const PanelDataset& ds, const EstimatorConfig& cfg,
                                      int t_star) {
  EstimationContext ctx(ds, cfg);
  return estimate_when_to_treat(ctx, t_star);
}

EstimateReport estimate_always_treat_staggered(const PanelDataset& ds,
                                               const EstimatorConfig& cfg) {
  EstimationContext ctx(ds, cfg);
  return estimate_always_treat_staggered(ctx);
}

}  // namespace dynlate
