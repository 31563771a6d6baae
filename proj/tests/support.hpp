#pragma once

// Shared helpers for the unit and acceptance suites: converting a finite
// discrete SCM into panel datasets (sampled rows or one weighted row per
// observed-law cell) so the estimation pipeline can be checked against the
// exact enumeration engine.

#include <vector>

#include "dynlate/discrete_scm.hpp"
#include "dynlate/panel.hpp"
#include "dynlate/rng.hpp"

namespace dynlate::testsupport {

inline Trajectory discrete_row(int z_idx, int d_idx, double y) {
  Trajectory tr;
  tr.z = index_to_bits(z_idx, 2);
  tr.d = index_to_bits(d_idx, 2);
  tr.states = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  tr.y = y;
  return tr;
}

// n i.i.d. draws from the SCM's observed law, as a T=2, p=1 panel with
// constant states.
inline PanelDataset sample_discrete_panel(const DiscreteScm& scm, long n, std::uint64_t seed) {
  PanelDataset ds;
  ds.T = 2;
  ds.p = 1;
  Rng rng(seed);
  std::vector<double> type_cdf;
  double acc = 0.0;
  for (const auto& type : scm.types) {
    acc += type.prob;
    type_cdf.push_back(acc);
  }
  std::vector<double> z_cdf;
  acc = 0.0;
  for (double q : scm.instrument_law) {
    acc += q;
    z_cdf.push_back(acc);
  }
  for (long i = 0; i < n; ++i) {
    const double uz = rng.uniform();
    int z = 0;
    while (z < 3 && uz > z_cdf[z]) ++z;
    const double ut = rng.uniform();
    size_t k = 0;
    while (k + 1 < scm.types.size() && ut > type_cdf[k]) ++k;
    const int d = scm.types[k].d_of_z[z];
    ds.rows.push_back(discrete_row(z, d, scm.types[k].y_of_d[d]));
  }
  return ds;
}

// One row per (z, d, y) cell of the exact observed law, weighted by its
// probability. Feeding this panel to a K=1 saturated-learner pipeline makes
// every empirical mean a population mean.
inline PanelDataset law_weighted_panel(const DiscreteScm& scm) {
  const ObservedLaw law = exact_observed_law(scm);
  PanelDataset ds;
  ds.T = 2;
  ds.p = 1;
  std::vector<double> weights;
  for (const auto& [key, prob] : law.cells) {
    const auto& [z, d, y] = key;
    if (prob <= 0.0) continue;
    ds.rows.push_back(discrete_row(z, d, y));
    weights.push_back(prob);
  }
  ds.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), weights.size());
  return ds;
}

// Four-type staggered-compliance SCM with positive mass on every complier
// group a two-period estimator needs: a staggered complier, a never-taker, a
// late complier and an entry-gated complier. Outcomes differ by type and
// treatment path so effects are heterogeneous.
inline DiscreteScm staggered_four_type_scm() {
  DiscreteScm scm;
  scm.instrument_law = {0.25, 0.25, 0.25, 0.25};
  const int d00 = bits_to_index({0, 0});
  const int d10 = bits_to_index({1, 0});
  const int d01 = bits_to_index({0, 1});
  const int d11 = bits_to_index({1, 1});

  LatentType staggered_complier;
  staggered_complier.prob = 0.30;
  staggered_complier.d_of_z = {d00, d10, d01, d11};
  staggered_complier.y_of_d = {0.0, 1.0, 0.5, 2.5};

  LatentType never_taker;
  never_taker.prob = 0.30;
  never_taker.d_of_z = {d00, d00, d00, d00};
  never_taker.y_of_d = {-0.5, 0.0, 0.0, 0.0};

  LatentType late_complier;  // complies only with the second encouragement
  late_complier.prob = 0.20;
  late_complier.d_of_z = {d00, d00, d01, d01};
  late_complier.y_of_d = {0.25, 0.0, 1.25, 0.0};

  LatentType entry_gated;  // second period requires first-period treatment
  entry_gated.prob = 0.20;
  entry_gated.d_of_z = {d00, d10, d00, d11};
  entry_gated.y_of_d = {0.5, 1.75, 0.0, 3.0};

  scm.types = {staggered_complier, never_taker, late_complier, entry_gated};
  check_discrete_scm(scm);
  return scm;
}

}  // namespace dynlate::testsupport
