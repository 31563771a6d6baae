#include "dynlate/panel.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dynlate {

InterventionVector InterventionVector::from_bits(std::vector<int> bits) {
  InterventionVector v;
  v.bits = std::move(bits);
  const int total = std::accumulate(v.bits.begin(), v.bits.end(), 0);
  const int T = static_cast<int>(v.bits.size());
  if (total == 0) {
    v.kind = Kind::all_zeros;
  } else if (total == T) {
    v.kind = T == 1 ? Kind::when_to_treat : Kind::all_ones;
  } else if (total == 1) {
    v.kind = Kind::when_to_treat;
  } else {
    v.kind = Kind::other;
  }
  if (v.kind == Kind::when_to_treat) {
    for (int t = 0; t < T; ++t) {
      if (v.bits[t] == 1) v.t_star = t + 1;
    }
  }
  return v;
}

InterventionVector InterventionVector::zeros(int T) {
  return from_bits(std::vector<int>(T, 0));
}

InterventionVector InterventionVector::ones(int T) {
  return from_bits(std::vector<int>(T, 1));
}

InterventionVector InterventionVector::when_to_treat(int T, int t_star) {
  if (t_star < 1 || t_star > T) throw std::out_of_range("when_to_treat period out of range");
  std::vector<int> bits(T, 0);
  bits[t_star - 1] = 1;
  return from_bits(std::move(bits));
}

std::string InterventionVector::to_string() const {
  std::ostringstream out;
  out << "(";
  for (size_t i = 0; i < bits.size(); ++i) {
    if (i) out << ",";
    out << bits[i];
  }
  out << ")";
  return out.str();
}

HistoryFeatures history_features(const Trajectory& tr, int t) {
  const int T = tr.periods();
  if (t < 1 || t > T) throw std::out_of_range("history period t must lie in 1..T");
  const int p = tr.state_dim();
  HistoryFeatures h;
  h.t = t;
  h.features.resize(history_feature_length(t, p));
  int k = 0;
  for (int s = 0; s < t - 1; ++s) h.features[k++] = static_cast<double>(tr.z[s]);
  for (int s = 0; s < t - 1; ++s) h.features[k++] = static_cast<double>(tr.d[s]);
  for (int s = 0; s < t; ++s) {
    h.features.segment(k, p) = tr.states[s];
    k += p;
  }
  return h;
}

namespace {

bool row_shape_ok(const Trajectory& tr, int T, int p) {
  if (tr.periods() != T) return false;
  if (static_cast<int>(tr.d.size()) != T) return false;
  if (static_cast<int>(tr.states.size()) != T) return false;
  for (const auto& s : tr.states) {
    if (static_cast<int>(s.size()) != p) return false;
    if (!s.allFinite()) return false;
  }
  for (int t = 0; t < T; ++t) {
    if (tr.z[t] != 0 && tr.z[t] != 1) return false;
    if (tr.d[t] != 0 && tr.d[t] != 1) return false;
  }
  return std::isfinite(tr.y);
}

constexpr long kMaxListedRows = 20;

}  // namespace

ValidationReport validate_dataset(const PanelDataset& ds, bool require_one_sided) {
  if (ds.rows.empty()) throw ValidationError("empty input");
  ValidationReport report;
  report.rows_checked = ds.n();
  for (long i = 0; i < ds.n(); ++i) {
    const Trajectory& tr = ds.rows[i];
    if (!row_shape_ok(tr, ds.T, ds.p)) {
      ++report.shape_violations;
      if (static_cast<long>(report.shape_violation_rows.size()) < kMaxListedRows)
        report.shape_violation_rows.push_back(i);
      continue;
    }
    if (require_one_sided) {
      for (int t = 0; t < ds.T; ++t) {
        if (tr.d[t] > tr.z[t]) {
          ++report.one_sided_violations;
          if (static_cast<long>(report.one_sided_violation_rows.size()) < kMaxListedRows)
            report.one_sided_violation_rows.push_back(i);
          break;
        }
      }
    }
  }
  return report;
}

long first_staggered_violation(const PanelDataset& ds) {
  for (long i = 0; i < ds.n(); ++i) {
    const Trajectory& tr = ds.rows[i];
    if (tr.periods() < 2) continue;
    if (tr.d[0] == 1 && tr.z[0] == 1) {
      for (int t = 1; t < tr.periods(); ++t) {
        if (tr.z[t] == 1 && tr.d[t] == 0) return i;
      }
    }
  }
  return -1;
}

}  // namespace dynlate
