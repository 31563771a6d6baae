#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "dynlate/errors.hpp"
#include "dynlate/rng.hpp"

namespace dynlate {

// Finite two-period SCM used for exact identification checks. A latent type
// carries a full compliance map z -> D(z) and a full potential outcome map
// d -> Y(d); the instrument is drawn independently of the type.
//
// Encouragement/treatment vectors are encoded as bit indices with period t
// at bit (t-1), so for T=2: (0,0)->0, (1,0)->1, (0,1)->2, (1,1)->3.
struct LatentType {
  double prob = 0.0;
  std::array<int, 4> d_of_z{};     // z index -> d index
  std::array<double, 4> y_of_d{};  // d index -> outcome
};

struct DiscreteScm {
  std::vector<LatentType> types;
  std::array<double, 4> instrument_law{};
};

int bits_to_index(const std::vector<int>& bits);
std::vector<int> index_to_bits(int index, int T);
std::string index_to_bitstring(int index, int T);  // "z1z2"
int bitstring_to_index(const std::string& s);

// Probability table over observed (z, d, y) triples.
struct ObservedLaw {
  struct Cell {
    int z = 0;
    int d = 0;
    double y = 0.0;
  };
  std::map<std::tuple<int, int, double>, double> cells;

  double total_mass() const;
};

// The two counterexample DGP pairs of the tightness section. T1_A/T1_B share
// an observed law but differ in the when-to-treat effect (4 vs 0) and satisfy
// sequential monotonicity; T2_A/T2_B share an observed law but differ in the
// always-treat effect (4 vs 0) and satisfy one-sided noncompliance.
enum class TableDgpId { T1_A, T1_B, T2_A, T2_B };
DiscreteScm table_dgp(TableDgpId id);

void check_discrete_scm(const DiscreteScm& scm);  // throws ValidationError

bool is_one_sided(const DiscreteScm& scm);
bool is_sequential_monotone(const DiscreteScm& scm);

ObservedLaw exact_observed_law(const DiscreteScm& scm);

struct CounterfactualSummary {
  double mean_outcome = 0.0;            // E[Y(D(z))]
  std::array<double, 4> treat_probs{};  // Pr(D(z)=d) per d index
};
CounterfactualSummary exact_counterfactuals(const DiscreteScm& scm, int z);

// theta(z,d) computed over the complier event {D(z) - D(0) = d}. Under
// one-sided noncompliance D(0)=(0,0) almost surely, so the event coincides
// with {D(z)=d} and this is the dynamic LATE definition; the difference event
// keeps the quantity meaningful for the monotone-but-not-one-sided table
// DGPs. Throws EstimabilityError("undefined LATE") on a zero-mass group.
double exact_late(const DiscreteScm& scm, int z, int d);

struct MixtureResult {
  double beta = 0.0;
  std::array<double, 4> weights{};  // w(z,d) per d index; zero off-support
};
// beta_z = E[Y(D(z)) - Y(0,0) | D(z) != (0,0)] with its mixture weights.
MixtureResult exact_mixture(const DiscreteScm& scm, int z);

struct GFormulaTarget {
  enum class Kind { outcome, treatment_event };
  Kind kind = Kind::outcome;
  int d = 0;  // for treatment_event

  static GFormulaTarget outcome() { return {Kind::outcome, 0}; }
  static GFormulaTarget event(int d) { return {Kind::treatment_event, d}; }
};

// Evaluates E[E[E[V | D_1, Z=z] | Z_1=z_1]] on the exact observed law (the
// section-5 DGPs carry no states, so the state conditioning degenerates).
// Throws EstimabilityError("overlap violated") when a positively weighted
// conditioning cell has zero mass.
double g_formula_exact(const DiscreteScm& scm, int z, const GFormulaTarget& target);

bool laws_equal(const ObservedLaw& a, const ObservedLaw& b, double tol);

// Joint law over named finite variables, for numerical conditional
// independence checks.
struct NamedLaw {
  std::vector<std::string> variables;
  std::vector<std::pair<std::vector<int>, double>> cells;
};

// Joint law of (Z, TYPE) implied by the SCM.
NamedLaw instrument_type_law(const DiscreteScm& scm);

// max over cells of |P(x,y|c) - P(x|c)P(y|c)|; zero-mass conditioning cells
// are skipped.
double check_cond_indep(const NamedLaw& law, const std::string& x, const std::string& y,
                        const std::vector<std::string>& given);

// Random SCM generators for property tests: <= max_types latent types,
// uniform instrument law, compliance maps rejection-sampled to satisfy the
// requested assumption flag, D_1 a function of z_1 only, outcomes on a
// dyadic grid in [-2, 2]. The one-sided generator guarantees positive mass
// for both when-to-treat complier groups.
DiscreteScm random_one_sided_scm(Rng& rng, int max_types = 6);
DiscreteScm random_monotone_scm(Rng& rng, int max_types = 6);

std::string discrete_scm_to_json(const DiscreteScm& scm);
DiscreteScm discrete_scm_from_json(const std::string& text);

}  // namespace dynlate
