#include <sstream>

#include "doctest.h"
#include "dynlate/panel.hpp"
#include "dynlate/panel_io.hpp"
#include "dynlate/rng.hpp"

using namespace dynlate;

namespace {

Trajectory make_row(std::vector<int> z, std::vector<int> d, std::vector<double> s0_like,
                    double y) {
  Trajectory tr;
  tr.z = std::move(z);
  tr.d = std::move(d);
  const int T = tr.periods();
  const int p = static_cast<int>(s0_like.size());
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd s(p);
    for (int j = 0; j < p; ++j) s[j] = s0_like[j] + t;
    tr.states.push_back(s);
  }
  tr.y = y;
  return tr;
}

}  // namespace

TEST_CASE("history features: t=1 is the initial state only") {
  const Trajectory tr = make_row({1, 0}, {1, 0}, {0.3}, 2.0);
  const HistoryFeatures h1 = history_features(tr, 1);
  REQUIRE(h1.features.size() == 1);
  CHECK(h1.features[0] == doctest::Approx(0.3));
}

TEST_CASE("history features: two-period unroll matches the block order") {
  // t=2, T=2, p=1, z=(1,0), d=(1,0), s_0=0.3, s_1=1.7 -> (1, 1, 0.3, 1.7)
  Trajectory tr;
  tr.z = {1, 0};
  tr.d = {1, 0};
  tr.states = {Eigen::VectorXd::Constant(1, 0.3), Eigen::VectorXd::Constant(1, 1.7)};
  tr.y = 0.0;
  const HistoryFeatures h2 = history_features(tr, 2);
  REQUIRE(h2.features.size() == 4);
  CHECK(h2.features[0] == 1.0);
  CHECK(h2.features[1] == 1.0);
  CHECK(h2.features[2] == doctest::Approx(0.3));
  CHECK(h2.features[3] == doctest::Approx(1.7));
}

TEST_CASE("history feature length formula") {
  CHECK(history_feature_length(3, 2) == 10);
  const Trajectory tr = make_row({0, 1, 0}, {0, 0, 0}, {0.1, -0.2}, 1.0);
  for (int t = 1; t <= 3; ++t)
    CHECK(static_cast<int>(history_features(tr, t).features.size()) ==
          history_feature_length(t, 2));
  CHECK_THROWS_AS(history_features(tr, 0), std::out_of_range);
  CHECK_THROWS_AS(history_features(tr, 4), std::out_of_range);
}

TEST_CASE("validate_dataset flags one-sided and shape violations") {
  PanelDataset ds;
  ds.T = 2;
  ds.p = 1;
  ds.rows.push_back(make_row({0, 1}, {0, 1}, {0.0}, 1.0));
  ds.rows.push_back(make_row({0, 1}, {1, 0}, {0.0}, 1.0));  // d_1 > z_1
  Trajectory bad = make_row({1, 1}, {0, 0}, {0.0}, 1.0);
  bad.states[1] = Eigen::VectorXd::Zero(2);  // mixed state dimensions
  ds.rows.push_back(bad);

  const ValidationReport report = validate_dataset(ds, true);
  CHECK(report.one_sided_violations == 1);
  CHECK(report.one_sided_violation_rows == std::vector<long>{1});
  CHECK(report.shape_violations == 1);
  CHECK(report.shape_violation_rows == std::vector<long>{2});

  PanelDataset empty;
  CHECK_THROWS_AS(validate_dataset(empty, false), ValidationError);
}

TEST_CASE("intervention vector tags") {
  CHECK(InterventionVector::from_bits({0, 0}).kind == InterventionVector::Kind::all_zeros);
  CHECK(InterventionVector::from_bits({1, 1}).kind == InterventionVector::Kind::all_ones);
  const auto wtt = InterventionVector::from_bits({0, 1, 0});
  CHECK(wtt.kind == InterventionVector::Kind::when_to_treat);
  CHECK(wtt.t_star == 2);
  CHECK(InterventionVector::from_bits({1, 0, 1}).kind == InterventionVector::Kind::other);
  CHECK(InterventionVector::when_to_treat(3, 2).to_string() == "(0,1,0)");
}

TEST_CASE("panel csv header and small round trip") {
  CHECK(panel_csv_header(2, 1) == "s0_0,z1,d1,s1_0,z2,d2,y");

  PanelDataset ds;
  ds.T = 2;
  ds.p = 1;
  std::istringstream in("s0_0,z1,d1,s1_0,z2,d2,y\n0.5,1,1,-0.25,0,0,2.5\n");
  ds = read_panel(in);
  REQUIRE(ds.n() == 1);
  CHECK(ds.T == 2);
  CHECK(ds.p == 1);
  CHECK(ds.rows[0].z == std::vector<int>{1, 0});
  CHECK(ds.rows[0].d == std::vector<int>{1, 0});
  CHECK(ds.rows[0].y == 2.5);
}

TEST_CASE("write then read reproduces every double bit-exactly") {
  Rng rng(99);
  PanelDataset ds;
  ds.T = 3;
  ds.p = 2;
  for (int i = 0; i < 50; ++i) {
    Trajectory tr;
    for (int t = 0; t < 3; ++t) {
      Eigen::VectorXd s(2);
      s << rng.normal() * 1e3, rng.normal() * 1e-7;
      tr.states.push_back(s);
      tr.z.push_back(rng.bernoulli(0.5));
      tr.d.push_back(tr.z.back() == 1 ? rng.bernoulli(0.5) : 0);
    }
    tr.y = rng.normal();
    ds.rows.push_back(tr);
  }
  std::ostringstream out;
  write_panel(ds, out);
  std::istringstream in(out.str());
  const PanelDataset round = read_panel(in);
  REQUIRE(round.n() == ds.n());
  for (long i = 0; i < ds.n(); ++i) {
    CHECK(round.rows[i].z == ds.rows[i].z);
    CHECK(round.rows[i].d == ds.rows[i].d);
    CHECK(round.rows[i].y == ds.rows[i].y);
    for (int t = 0; t < 3; ++t) CHECK(round.rows[i].states[t] == ds.rows[i].states[t]);
  }
}

TEST_CASE("parse errors name the offending row and column") {
  {
    std::istringstream in("s0_0,z1,d1,s1_0,z2,d2,y\n0.5,1,2,0,0,0,1\n");
    CHECK_THROWS_WITH_AS(read_panel(in), doctest::Contains("non-binary treatment"), ParseError);
  }
  {
    std::istringstream in("s0_0,z1,d1,s1_0,z2,d2,y\n0.5,1,1,nan,0,0,1\n");
    CHECK_THROWS_WITH_AS(read_panel(in), doctest::Contains("NaN"), ParseError);
  }
  {
    std::istringstream in("s0_0,z1,d1,y\n0.5,1,1,1\n");  // T=1 schema is legal
    const PanelDataset ds = read_panel(in);
    CHECK(ds.T == 1);
  }
  {
    std::istringstream in("s0_0,z1,d1,s1_0,z2,d2,y\n0.5,1,1,0,0,0\n");  // short row
    CHECK_THROWS_WITH_AS(read_panel(in), doctest::Contains("row 1"), ParseError);
  }
  {
    std::istringstream in("a,b,c\n1,2,3\n");
    CHECK_THROWS_AS(read_panel(in), ParseError);
  }
}

TEST_CASE("staggered violation scan") {
  PanelDataset ds;
  ds.T = 2;
  ds.p = 1;
  ds.rows.push_back(make_row({1, 1}, {1, 1}, {0.0}, 0.0));
  CHECK(first_staggered_violation(ds) == -1);
  ds.rows.push_back(make_row({1, 1}, {1, 0}, {0.0}, 0.0));
  CHECK(first_staggered_violation(ds) == 1);
}
