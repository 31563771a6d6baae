#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "dynlate/errors.hpp"

namespace dynlate {

// One observed unit path: states S_0..S_{T-1}, encouragements Z_1..Z_T,
// treatments D_1..D_T and the final outcome Y.
struct Trajectory {
  std::vector<Eigen::VectorXd> states;
  std::vector<int> z;
  std::vector<int> d;
  double y = 0.0;

  int periods() const { return static_cast<int>(z.size()); }
  int state_dim() const { return states.empty() ? 0 : static_cast<int>(states[0].size()); }
};

// Collection of independent unit paths with common T and p. `weights` is an
// optional per-row population weight vector (empty means unweighted); it is
// used when a dataset encodes an exact law rather than an i.i.d. sample.
struct PanelDataset {
  std::vector<Trajectory> rows;
  int T = 0;
  int p = 0;
  Eigen::VectorXd weights;

  long n() const { return static_cast<long>(rows.size()); }
  bool weighted() const { return weights.size() > 0; }
};

// Encouragement/treatment intervention vector with a derived tag.
struct InterventionVector {
  enum class Kind { all_zeros, when_to_treat, all_ones, other };

  std::vector<int> bits;
  Kind kind = Kind::other;
  int t_star = -1;  // only meaningful for when_to_treat

  static InterventionVector from_bits(std::vector<int> bits);
  static InterventionVector zeros(int T);
  static InterventionVector ones(int T);
  static InterventionVector when_to_treat(int T, int t_star);

  std::string to_string() const;  // e.g. "(0,1)"
};

// Flattened representation of H_t = (z_{<t}, d_{<t}, s_{<t}).
struct HistoryFeatures {
  int t = 0;
  Eigen::VectorXd features;
};

inline int history_feature_length(int t, int p) { return (t - 1) * 2 + t * p; }

// Deterministic flattening of the trajectory prefix before period t: the
// z-block, then the d-block, then the concatenated states. Throws
// std::out_of_range if t is not in 1..T.
HistoryFeatures history_features(const Trajectory& tr, int t);

struct ValidationReport {
  long rows_checked = 0;
  long shape_violations = 0;
  long one_sided_violations = 0;
  std::vector<long> shape_violation_rows;      // first offenders, capped
  std::vector<long> one_sided_violation_rows;  // first offenders, capped

  bool ok() const { return shape_violations == 0 && one_sided_violations == 0; }
};

// Checks every row against the shape rules (consistent T and p, binary z/d,
// finite values) and, when require_one_sided is set, the pathwise constraint
// d_t <= z_t. Throws ValidationError on an empty dataset.
ValidationReport validate_dataset(const PanelDataset& ds, bool require_one_sided);

// Rows where a unit complied in period 1 (D_1=1, Z_1=1) but later declined an
// encouragement (Z_t=1, D_t=0). Returns -1 if none.
long first_staggered_violation(const PanelDataset& ds);

}  // namespace dynlate
