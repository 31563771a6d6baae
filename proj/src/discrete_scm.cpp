#include "dynlate/discrete_scm.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

namespace dynlate {

namespace {
constexpr int kT = 2;
constexpr int kNumVec = 4;  // |{0,1}^2|

int bit(int index, int t) { return (index >> (t - 1)) & 1; }
}  // namespace

int bits_to_index(const std::vector<int>& bits) {
  int idx = 0;
  for (size_t t = 0; t < bits.size(); ++t) idx |= (bits[t] & 1) << t;
  return idx;
}

std::vector<int> index_to_bits(int index, int T) {
  std::vector<int> bits(T);
  for (int t = 0; t < T; ++t) bits[t] = (index >> t) & 1;
  return bits;
}

std::string index_to_bitstring(int index, int T) {
  std::string s(T, '0');
  for (int t = 0; t < T; ++t) s[t] = static_cast<char>('0' + ((index >> t) & 1));
  return s;
}

int bitstring_to_index(const std::string& s) {
  int idx = 0;
  for (size_t t = 0; t < s.size(); ++t) {
    if (s[t] != '0' && s[t] != '1') throw ParseError("bad bitstring: " + s);
    idx |= (s[t] - '0') << t;
  }
  return idx;
}

double ObservedLaw::total_mass() const {
  double total = 0.0;
  for (const auto& [key, prob] : cells) total += prob;
  return total;
}

void check_discrete_scm(const DiscreteScm& scm) {
  if (scm.types.empty()) throw ValidationError("discrete SCM needs at least one type");
  double type_mass = 0.0;
  for (const auto& type : scm.types) {
    if (type.prob < 0.0) throw ValidationError("negative type probability");
    type_mass += type.prob;
    for (int z = 0; z < kNumVec; ++z) {
      if (type.d_of_z[z] < 0 || type.d_of_z[z] >= kNumVec)
        throw ValidationError("compliance map out of range");
    }
  }
  if (std::abs(type_mass - 1.0) > 1e-12)
    throw ValidationError("type probabilities do not sum to 1");
  double z_mass = 0.0;
  for (double q : scm.instrument_law) {
    if (q < 0.0) throw ValidationError("negative instrument probability");
    z_mass += q;
  }
  if (std::abs(z_mass - 1.0) > 1e-12)
    throw ValidationError("instrument law does not sum to 1");
}

bool is_one_sided(const DiscreteScm& scm) {
  for (const auto& type : scm.types) {
    for (int z = 0; z < kNumVec; ++z) {
      const int d = type.d_of_z[z];
      for (int t = 1; t <= kT; ++t) {
        if (bit(d, t) > bit(z, t)) return false;
      }
    }
  }
  return true;
}

bool is_sequential_monotone(const DiscreteScm& scm) {
  for (const auto& type : scm.types) {
    // D_1 must be a function of z_1 alone.
    const int d1_at_z1_0 = bit(type.d_of_z[bits_to_index({0, 0})], 1);
    const int d1_at_z1_1 = bit(type.d_of_z[bits_to_index({1, 0})], 1);
    if (bit(type.d_of_z[bits_to_index({0, 1})], 1) != d1_at_z1_0) return false;
    if (bit(type.d_of_z[bits_to_index({1, 1})], 1) != d1_at_z1_1) return false;
    if (d1_at_z1_1 < d1_at_z1_0) return false;
    for (int z1 = 0; z1 <= 1; ++z1) {
      const int d2_lo = bit(type.d_of_z[bits_to_index({z1, 0})], 2);
      const int d2_hi = bit(type.d_of_z[bits_to_index({z1, 1})], 2);
      if (d2_hi < d2_lo) return false;
    }
  }
  return true;
}

DiscreteScm table_dgp(TableDgpId id) {
  DiscreteScm scm;
  scm.instrument_law = {0.25, 0.25, 0.25, 0.25};
  const int z00 = bits_to_index({0, 0});
  const int z10 = bits_to_index({1, 0});
  const int z01 = bits_to_index({0, 1});
  const int z11 = bits_to_index({1, 1});
  const int d00 = z00, d10 = z10, d01 = z01, d11 = z11;

  LatentType a, b;
  a.prob = b.prob = 0.5;
  if (id == TableDgpId::T1_A || id == TableDgpId::T1_B) {
    // Monotone pair: two subpopulations differ in D(0,0) and in Y(1,0) only.
    a.d_of_z = {d00, d10, d01, d11};  // D(0,0)=(0,0), D(z)=z otherwise
    b.d_of_z = {d01, d10, d01, d11};  // D(0,0)=(0,1), D(z)=z otherwise
    const double ya10 = (id == TableDgpId::T1_A) ? 2.0 : -2.0;
    const double yb10 = (id == TableDgpId::T1_A) ? -2.0 : 2.0;
    a.y_of_d = {-2.0, ya10, -2.0, -2.0};
    b.y_of_d = {-2.0, yb10, -2.0, -2.0};
  } else {
    // One-sided pair: subpopulations differ in D(1,1) and in Y(0,0) only.
    a.d_of_z = {d00, d10, d01, d10};  // D(1,1)=(1,0), D(z)=z otherwise
    b.d_of_z = {d00, d10, d01, d11};  // D(1,1)=(1,1), D(z)=z otherwise
    const double ya00 = (id == TableDgpId::T2_A) ? 2.0 : -2.0;
    const double yb00 = (id == TableDgpId::T2_A) ? -2.0 : 2.0;
    a.y_of_d = {ya00, 2.0, 2.0, 2.0};
    b.y_of_d = {yb00, 2.0, 2.0, 2.0};
  }
  scm.types = {a, b};
  check_discrete_scm(scm);
  return scm;
}

ObservedLaw exact_observed_law(const DiscreteScm& scm) {
  ObservedLaw law;
  for (int z = 0; z < kNumVec; ++z) {
    for (const auto& type : scm.types) {
      const int d = type.d_of_z[z];
      const double y = type.y_of_d[d];
      law.cells[{z, d, y}] += scm.instrument_law[z] * type.prob;
    }
  }
  return law;
}

CounterfactualSummary exact_counterfactuals(const DiscreteScm& scm, int z) {
  CounterfactualSummary out;
  for (const auto& type : scm.types) {
    const int d = type.d_of_z[z];
    out.mean_outcome += type.prob * type.y_of_d[d];
    out.treat_probs[d] += type.prob;
  }
  return out;
}

double exact_late(const DiscreteScm& scm, int z, int d) {
  double mass = 0.0;
  double effect = 0.0;
  for (const auto& type : scm.types) {
    const int dz = type.d_of_z[z];
    const int d0 = type.d_of_z[0];
    bool in_group = true;
    for (int t = 1; t <= kT; ++t) {
      if (bit(dz, t) - bit(d0, t) != bit(d, t)) in_group = false;
    }
    if (!in_group) continue;
    mass += type.prob;
    effect += type.prob * (type.y_of_d[d] - type.y_of_d[0]);
  }
  if (mass <= 0.0) throw EstimabilityError("undefined LATE");
  return effect / mass;
}

MixtureResult exact_mixture(const DiscreteScm& scm, int z) {
  MixtureResult out;
  double mass = 0.0;
  for (const auto& type : scm.types) {
    const int dz = type.d_of_z[z];
    if (dz == 0) continue;
    mass += type.prob;
    out.beta += type.prob * (type.y_of_d[dz] - type.y_of_d[0]);
  }
  if (mass <= 0.0) throw EstimabilityError("undefined mixture LATE");
  out.beta /= mass;

  const CounterfactualSummary cf = exact_counterfactuals(scm, z);
  double weight_mass = 0.0;
  for (int d = 1; d < kNumVec; ++d) {
    bool below = true;
    for (int t = 1; t <= kT; ++t) {
      if (bit(d, t) > bit(z, t)) below = false;
    }
    if (below) weight_mass += cf.treat_probs[d];
  }
  for (int d = 1; d < kNumVec; ++d) {
    bool below = true;
    for (int t = 1; t <= kT; ++t) {
      if (bit(d, t) > bit(z, t)) below = false;
    }
    if (below && weight_mass > 0.0) out.weights[d] = cf.treat_probs[d] / weight_mass;
  }
  return out;
}

double g_formula_exact(const DiscreteScm& scm, int z, const GFormulaTarget& target) {
  const ObservedLaw law = exact_observed_law(scm);
  const int z1 = bit(z, 1);

  double z1_mass = 0.0;
  std::array<double, 2> d1_mass{};  // joint with Z_1=z1, marginal over Z_2
  std::array<double, 2> inner_mass{};
  std::array<double, 2> inner_sum{};
  for (const auto& [key, prob] : law.cells) {
    const auto& [cz, cd, cy] = key;
    const int cd1 = bit(cd, 1);
    if (bit(cz, 1) == z1) {
      z1_mass += prob;
      d1_mass[cd1] += prob;
    }
    if (cz == z) {
      inner_mass[cd1] += prob;
      const double v = target.kind == GFormulaTarget::Kind::outcome
                           ? cy
                           : (cd == target.d ? 1.0 : 0.0);
      inner_sum[cd1] += prob * v;
    }
  }
  if (z1_mass <= 0.0) throw EstimabilityError("overlap violated");

  double result = 0.0;
  for (int d1 = 0; d1 <= 1; ++d1) {
    const double weight = d1_mass[d1] / z1_mass;
    if (weight == 0.0) continue;
    if (inner_mass[d1] <= 0.0) throw EstimabilityError("overlap violated");
    result += weight * (inner_sum[d1] / inner_mass[d1]);
  }
  return result;
}

bool laws_equal(const ObservedLaw& a, const ObservedLaw& b, double tol) {
  std::set<std::tuple<int, int, double>> keys;
  for (const auto& [key, prob] : a.cells) keys.insert(key);
  for (const auto& [key, prob] : b.cells) keys.insert(key);
  for (const auto& key : keys) {
    const auto ia = a.cells.find(key);
    const auto ib = b.cells.find(key);
    const double pa = ia == a.cells.end() ? 0.0 : ia->second;
    const double pb = ib == b.cells.end() ? 0.0 : ib->second;
    if (std::abs(pa - pb) > tol) return false;
  }
  return true;
}

NamedLaw instrument_type_law(const DiscreteScm& scm) {
  NamedLaw law;
  law.variables = {"Z", "TYPE"};
  for (int z = 0; z < kNumVec; ++z) {
    for (size_t k = 0; k < scm.types.size(); ++k) {
      const double prob = scm.instrument_law[z] * scm.types[k].prob;
      if (prob > 0.0) law.cells.push_back({{z, static_cast<int>(k)}, prob});
    }
  }
  return law;
}

double check_cond_indep(const NamedLaw& law, const std::string& x, const std::string& y,
                        const std::vector<std::string>& given) {
  auto var_index = [&](const std::string& name) {
    for (size_t i = 0; i < law.variables.size(); ++i) {
      if (law.variables[i] == name) return static_cast<int>(i);
    }
    throw ConfigError("unknown variable: " + name);
  };
  const int xi = var_index(x);
  const int yi = var_index(y);
  std::vector<int> ci;
  for (const auto& g : given) ci.push_back(var_index(g));

  struct Group {
    double mass = 0.0;
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> mx, my;
  };
  std::map<std::vector<int>, Group> groups;
  for (const auto& [values, prob] : law.cells) {
    std::vector<int> key;
    key.reserve(ci.size());
    for (int c : ci) key.push_back(values[c]);
    Group& g = groups[key];
    g.mass += prob;
    g.joint[{values[xi], values[yi]}] += prob;
    g.mx[values[xi]] += prob;
    g.my[values[yi]] += prob;
  }

  double max_discrepancy = 0.0;
  for (const auto& [key, g] : groups) {
    if (g.mass <= 0.0) continue;
    for (const auto& [xv, px] : g.mx) {
      for (const auto& [yv, py] : g.my) {
        const auto it = g.joint.find({xv, yv});
        const double pxy = it == g.joint.end() ? 0.0 : it->second / g.mass;
        const double gap = std::abs(pxy - (px / g.mass) * (py / g.mass));
        max_discrepancy = std::max(max_discrepancy, gap);
      }
    }
  }
  return max_discrepancy;
}

namespace {

double dyadic_outcome(Rng& rng) {
  // Values on the quarter grid in [-2, 2]; exactly representable doubles.
  const int step = static_cast<int>(rng.uniform() * 17.0);
  return (std::min(step, 16) - 8) * 0.25;
}

std::vector<double> random_type_probs(Rng& rng, int max_types) {
  const int n_types = 2 + static_cast<int>(rng.uniform() * (max_types - 1));
  std::vector<double> probs(std::min(n_types, max_types));
  double total = 0.0;
  for (double& q : probs) {
    q = 0.1 + 0.9 * rng.uniform();
    total += q;
  }
  for (double& q : probs) q /= total;
  // Make the probabilities sum to one exactly.
  double acc = 0.0;
  for (size_t i = 0; i + 1 < probs.size(); ++i) acc += probs[i];
  probs.back() = 1.0 - acc;
  return probs;
}

}  // namespace

DiscreteScm random_one_sided_scm(Rng& rng, int max_types) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    DiscreteScm scm;
    scm.instrument_law = {0.25, 0.25, 0.25, 0.25};
    for (double q : random_type_probs(rng, max_types)) {
      LatentType type;
      type.prob = q;
      const int d1_when_encouraged = rng.bernoulli(0.5);
      for (int z = 0; z < kNumVec; ++z) {
        const int d1 = bit(z, 1) == 1 ? d1_when_encouraged : 0;
        const int d2 = bit(z, 2) == 1 ? rng.bernoulli(0.5) : 0;
        type.d_of_z[z] = bits_to_index({d1, d2});
      }
      for (int d = 0; d < kNumVec; ++d) type.y_of_d[d] = dyadic_outcome(rng);
      scm.types.push_back(type);
    }
    bool has_first_period_complier = false;
    bool has_second_period_complier = false;
    for (const auto& type : scm.types) {
      if (type.d_of_z[bits_to_index({1, 0})] == bits_to_index({1, 0}))
        has_first_period_complier = true;
      if (type.d_of_z[bits_to_index({0, 1})] == bits_to_index({0, 1}))
        has_second_period_complier = true;
    }
    if (!has_first_period_complier || !has_second_period_complier) continue;
    check_discrete_scm(scm);
    return scm;
  }
  throw std::runtime_error("random_one_sided_scm: rejection sampling failed");
}

DiscreteScm random_monotone_scm(Rng& rng, int max_types) {
  DiscreteScm scm;
  scm.instrument_law = {0.25, 0.25, 0.25, 0.25};
  for (double q : random_type_probs(rng, max_types)) {
    LatentType type;
    type.prob = q;
    const int d1_lo = rng.bernoulli(0.3);
    const int d1_hi = std::max(d1_lo, rng.bernoulli(0.6));
    for (int z1 = 0; z1 <= 1; ++z1) {
      const int d2_lo = rng.bernoulli(0.3);
      const int d2_hi = std::max(d2_lo, rng.bernoulli(0.6));
      const int d1 = z1 == 1 ? d1_hi : d1_lo;
      type.d_of_z[bits_to_index({z1, 0})] = bits_to_index({d1, d2_lo});
      type.d_of_z[bits_to_index({z1, 1})] = bits_to_index({d1, d2_hi});
    }
    for (int d = 0; d < kNumVec; ++d) type.y_of_d[d] = dyadic_outcome(rng);
    scm.types.push_back(type);
  }
  check_discrete_scm(scm);
  return scm;
}

std::string discrete_scm_to_json(const DiscreteScm& scm) {
  nlohmann::json doc;
  doc["types"] = nlohmann::json::array();
  for (const auto& type : scm.types) {
    nlohmann::json jt;
    jt["prob"] = type.prob;
    for (int z = 0; z < kNumVec; ++z)
      jt["dz_map"][index_to_bitstring(z, kT)] = index_to_bitstring(type.d_of_z[z], kT);
    for (int d = 0; d < kNumVec; ++d) jt["yd_map"][index_to_bitstring(d, kT)] = type.y_of_d[d];
    doc["types"].push_back(jt);
  }
  for (int z = 0; z < kNumVec; ++z)
    doc["instrument_law"][index_to_bitstring(z, kT)] = scm.instrument_law[z];
  return doc.dump(2);
}

DiscreteScm discrete_scm_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad discrete SCM json: ") + e.what());
  }
  DiscreteScm scm;
  try {
    for (const auto& jt : doc.at("types")) {
      LatentType type;
      type.prob = jt.at("prob").get<double>();
      for (const auto& [zs, ds] : jt.at("dz_map").items())
        type.d_of_z[bitstring_to_index(zs)] = bitstring_to_index(ds.get<std::string>());
      for (const auto& [dstr, yv] : jt.at("yd_map").items())
        type.y_of_d[bitstring_to_index(dstr)] = yv.get<double>();
      scm.types.push_back(type);
    }
    for (const auto& [zs, qv] : doc.at("instrument_law").items())
      scm.instrument_law[bitstring_to_index(zs)] = qv.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad discrete SCM json: ") + e.what());
  }
  check_discrete_scm(scm);
  return scm;
}

}  // namespace dynlate
