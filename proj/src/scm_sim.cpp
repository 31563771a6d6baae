#include "dynlate/scm_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace dynlate {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_scm(const LogisticLinearScm& scm) {
  if (scm.T < 1) throw ConfigError("T must be >= 1");
  if (scm.p < 1) throw ConfigError("p must be >= 1");
  if (scm.outcome_state_index < 0 || scm.outcome_state_index >= scm.p)
    throw ConfigError("outcome_state_index out of range");
}

EncouragementPolicy EncouragementPolicy::constant(int z) {
  EncouragementPolicy pol;
  pol.decide = [z](int, const Trajectory&) { return z; };
  return pol;
}

EncouragementPolicy EncouragementPolicy::first_period_complier() {
  EncouragementPolicy pol;
  pol.decide = [](int t, const Trajectory& prefix) { return t == 1 ? 1 : prefix.d[0]; };
  return pol;
}

InterventionSpec InterventionSpec::fix_instruments(std::vector<int> z, std::string tag) {
  InterventionSpec spec;
  spec.kind = Kind::fix_instruments;
  spec.bits = std::move(z);
  spec.tag = std::move(tag);
  return spec;
}

InterventionSpec InterventionSpec::fix_treatments(std::vector<int> d, std::string tag) {
  InterventionSpec spec;
  spec.kind = Kind::fix_treatments;
  spec.bits = std::move(d);
  spec.tag = std::move(tag);
  return spec;
}

InterventionSpec InterventionSpec::policy(EncouragementPolicy pol, std::string tag) {
  InterventionSpec spec;
  spec.kind = Kind::policy;
  spec.pol = std::move(pol);
  spec.tag = std::move(tag);
  return spec;
}

namespace {

// All exogenous noise of one unit, drawn once so that every intervention is
// evaluated on common random numbers.
struct ExogenousDraw {
  double u = 0.0;
  Eigen::VectorXd s0;
  std::vector<double> z_uniform;            // length T
  std::vector<double> d_uniform;            // length T
  std::vector<Eigen::VectorXd> state_noise; // length T-1 (S_T never materializes)
  double y_noise = 0.0;
};

ExogenousDraw draw_exogenous(const LogisticLinearScm& scm, Rng& rng) {
  ExogenousDraw exo;
  exo.u = std::clamp(rng.normal(), -2.0, 2.0);
  exo.s0.resize(scm.p);
  for (int j = 0; j < scm.p; ++j) exo.s0[j] = rng.normal();
  exo.z_uniform.resize(scm.T);
  exo.d_uniform.resize(scm.T);
  exo.state_noise.resize(scm.T - 1);
  for (int t = 0; t < scm.T; ++t) {
    exo.z_uniform[t] = rng.uniform();
    exo.d_uniform[t] = rng.uniform();
    if (t < scm.T - 1) {
      exo.state_noise[t].resize(scm.p);
      for (int j = 0; j < scm.p; ++j) exo.state_noise[t][j] = rng.normal();
    }
  }
  exo.y_noise = rng.normal();
  return exo;
}

Trajectory evaluate(const LogisticLinearScm& scm, const ExogenousDraw& exo,
                    const InterventionSpec* spec) {
  Trajectory tr;
  tr.states.reserve(scm.T);
  tr.states.push_back(exo.s0);
  tr.z.assign(scm.T, 0);
  tr.d.assign(scm.T, 0);

  for (int t = 1; t <= scm.T; ++t) {
    const Eigen::VectorXd& prev = tr.states[t - 1];
    int z_t;
    if (spec && spec->kind == InterventionSpec::Kind::fix_instruments) {
      z_t = spec->bits[t - 1];
    } else if (spec && spec->kind == InterventionSpec::Kind::policy) {
      Trajectory prefix = tr;
      prefix.z.resize(t - 1);
      prefix.d.resize(t - 1);
      z_t = spec->pol.decide(t, prefix);
    } else {
      z_t = exo.z_uniform[t - 1] < logistic(prev[0]) ? 1 : 0;
    }
    tr.z[t - 1] = z_t;

    int d_t;
    if (spec && spec->kind == InterventionSpec::Kind::fix_treatments) {
      d_t = spec->bits[t - 1];
    } else if (scm.variant == DgpVariant::staggered_dgp && t >= 2 && tr.d[0] == 1) {
      d_t = z_t;
    } else {
      const double comply = logistic(2.0 * z_t - 1.0 + exo.u);
      d_t = z_t * (exo.d_uniform[t - 1] < comply ? 1 : 0);
    }
    tr.d[t - 1] = d_t;

    if (t <= scm.T - 1) {
      const double d_prev = t >= 2 ? static_cast<double>(tr.d[t - 2]) : 0.0;
      Eigen::VectorXd next = 0.5 * prev + exo.state_noise[t - 1];
      next.array() += d_prev + exo.u;
      tr.states.push_back(std::move(next));
    }
  }

  tr.y = scm.outcome_treatment_coef * tr.d[scm.T - 1] +
         tr.states[scm.T - 1][scm.outcome_state_index] + exo.u + exo.y_noise;
  return tr;
}

void check_bits(const InterventionSpec& spec, int T) {
  if (spec.kind != InterventionSpec::Kind::policy && static_cast<int>(spec.bits.size()) != T)
    throw ConfigError("intervention vector length must equal T");
}

}  // namespace

PanelDataset simulate(const LogisticLinearScm& scm, long n, std::uint64_t seed) {
  check_scm(scm);
  if (n < 1) throw ConfigError("n must be >= 1");
  PanelDataset ds;
  ds.T = scm.T;
  ds.p = scm.p;
  ds.rows.resize(n);
  for (long i = 0; i < n; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    const ExogenousDraw exo = draw_exogenous(scm, rng);
    ds.rows[i] = evaluate(scm, exo, nullptr);
  }
  return ds;
}

std::vector<CounterfactualDraw> rollout_counterfactual(const LogisticLinearScm& scm, long n,
                                                       std::uint64_t seed,
                                                       const std::vector<InterventionSpec>& specs) {
  check_scm(scm);
  if (n < 1) throw ConfigError("n must be >= 1");
  for (const auto& spec : specs) check_bits(spec, scm.T);
  std::vector<CounterfactualDraw> draws(n);
  for (long i = 0; i < n; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    const ExogenousDraw exo = draw_exogenous(scm, rng);
    CounterfactualDraw& draw = draws[i];
    draw.u = exo.u;
    draw.s0 = exo.s0;
    draw.outcomes.reserve(specs.size());
    for (const auto& spec : specs) {
      const Trajectory tr = evaluate(scm, exo, &spec);
      InterventionOutcome out;
      out.tag = spec.tag;
      out.z = tr.z;
      out.d = tr.d;
      out.y = tr.y;
      out.complied_all = tr.d == tr.z;
      draw.outcomes.push_back(std::move(out));
    }
  }
  return draws;
}

void write_rollout_csv(const std::vector<CounterfactualDraw>& draws, int T, std::ostream& out) {
  if (draws.empty()) return;
  out << "u";
  for (const auto& o : draws[0].outcomes) {
    out << ",y_cf_" << o.tag;
    for (int t = 1; t <= T; ++t) out << ",d_cf_" << o.tag << "_" << t;
  }
  out << "\n";
  char buf[40];
  for (const auto& draw : draws) {
    std::snprintf(buf, sizeof(buf), "%.17g", draw.u);
    out << buf;
    for (const auto& o : draw.outcomes) {
      std::snprintf(buf, sizeof(buf), "%.17g", o.y);
      out << "," << buf;
      for (int t = 0; t < T; ++t) out << "," << o.d[t];
    }
    out << "\n";
  }
}

namespace {

struct StreamingMoments {
  long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / count;
    m2 += delta * (x - mean);
  }
  double std_error() const {
    if (count < 2) return 0.0;
    return std::sqrt(m2 / (count - 1) / count);
  }
};

}  // namespace

McEstimate true_late_mc(const LogisticLinearScm& scm, const std::vector<int>& z,
                        const std::vector<int>& d, long n_mc, std::uint64_t seed) {
  check_scm(scm);
  const auto spec_z = InterventionSpec::fix_instruments(z);
  const auto spec_d = InterventionSpec::fix_treatments(d);
  const auto spec_0 = InterventionSpec::fix_treatments(std::vector<int>(scm.T, 0));
  check_bits(spec_z, scm.T);
  check_bits(spec_d, scm.T);

  StreamingMoments contrast;
  for (long i = 0; i < n_mc; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    const ExogenousDraw exo = draw_exogenous(scm, rng);
    const Trajectory under_z = evaluate(scm, exo, &spec_z);
    if (under_z.d != d) continue;
    const double y_d = evaluate(scm, exo, &spec_d).y;
    const double y_0 = evaluate(scm, exo, &spec_0).y;
    contrast.add(y_d - y_0);
  }
  if (contrast.count == 0) throw EstimabilityError("no compliers drawn");
  McEstimate est;
  est.value = contrast.mean;
  est.std_error = contrast.std_error();
  est.event_prob = static_cast<double>(contrast.count) / static_cast<double>(n_mc);
  est.n_event = contrast.count;
  return est;
}

McEstimate true_mixture_mc(const LogisticLinearScm& scm, const std::vector<int>& z, long n_mc,
                           std::uint64_t seed) {
  check_scm(scm);
  const auto spec_z = InterventionSpec::fix_instruments(z);
  const auto spec_0 = InterventionSpec::fix_treatments(std::vector<int>(scm.T, 0));
  check_bits(spec_z, scm.T);
  const std::vector<int> zeros(scm.T, 0);

  StreamingMoments contrast;
  for (long i = 0; i < n_mc; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    const ExogenousDraw exo = draw_exogenous(scm, rng);
    const Trajectory under_z = evaluate(scm, exo, &spec_z);
    if (under_z.d == zeros) continue;
    const double y_0 = evaluate(scm, exo, &spec_0).y;
    contrast.add(under_z.y - y_0);
  }
  if (contrast.count == 0) throw EstimabilityError("no compliers drawn");
  McEstimate est;
  est.value = contrast.mean;
  est.std_error = contrast.std_error();
  est.event_prob = static_cast<double>(contrast.count) / static_cast<double>(n_mc);
  est.n_event = contrast.count;
  return est;
}

McEstimate true_counterfactual_mean_mc(const LogisticLinearScm& scm, const std::vector<int>& z,
                                       long n_mc, std::uint64_t seed) {
  check_scm(scm);
  const auto spec_z = InterventionSpec::fix_instruments(z);
  check_bits(spec_z, scm.T);
  StreamingMoments outcome;
  for (long i = 0; i < n_mc; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    const ExogenousDraw exo = draw_exogenous(scm, rng);
    outcome.add(evaluate(scm, exo, &spec_z).y);
  }
  McEstimate est;
  est.value = outcome.mean;
  est.std_error = outcome.std_error();
  est.event_prob = 1.0;
  est.n_event = outcome.count;
  return est;
}

McEstimate true_compliance_prob_mc(const LogisticLinearScm& scm, const std::vector<int>& z,
                                   const std::vector<int>& d, long n_mc, std::uint64_t seed) {
  check_scm(scm);
  const auto spec_z = InterventionSpec::fix_instruments(z);
  check_bits(spec_z, scm.T);
  StreamingMoments indicator;
  for (long i = 0; i < n_mc; ++i) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(i));
    const ExogenousDraw exo = draw_exogenous(scm, rng);
    indicator.add(evaluate(scm, exo, &spec_z).d == d ? 1.0 : 0.0);
  }
  McEstimate est;
  est.value = indicator.mean;
  est.std_error = indicator.std_error();
  est.event_prob = indicator.mean;
  est.n_event = static_cast<long>(indicator.mean * n_mc + 0.5);
  return est;
}

}  // namespace dynlate
