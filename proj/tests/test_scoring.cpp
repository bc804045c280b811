#include <cmath>
#include <stdexcept>

#include "bunas/rng.hpp"
#include "bunas/scoring.hpp"
#include "doctest.h"

using namespace bunas;

TEST_CASE("iou: identical, disjoint, 1/7 overlap") {
  Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{3, 3, 5, 5}) == 0.0);
  CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("iou: symmetry and scale invariance") {
  Rng rng(211);
  for (int t = 0; t < 200; ++t) {
    Box a{rng.uniform(0, 5), rng.uniform(0, 5), 0, 0};
    a.x_max = a.x_min + rng.uniform(0.1, 3);
    a.y_max = a.y_min + rng.uniform(0.1, 3);
    Box b{rng.uniform(0, 5), rng.uniform(0, 5), 0, 0};
    b.x_max = b.x_min + rng.uniform(0.1, 3);
    b.y_max = b.y_min + rng.uniform(0.1, 3);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    const double s = rng.uniform(0.5, 4.0);
    Box as{a.x_min * s, a.y_min * s, a.x_max * s, a.y_max * s};
    Box bs{b.x_min * s, b.y_min * s, b.x_max * s, b.y_max * s};
    CHECK(iou(as, bs) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("iou: degenerate conventions and invalid boxes") {
  Box pt{1, 1, 1, 1};
  CHECK(iou(pt, pt) == 1.0);  // same zero-area point
  CHECK(iou(pt, Box{2, 2, 2, 2}) == 0.0);
  CHECK_THROWS_AS(iou(Box{2, 0, 1, 1}, pt), std::invalid_argument);
}

TEST_CASE("r_iou: means and errors") {
  CHECK(r_iou({1, 1, 1}) == 1.0);
  CHECK(r_iou({0.5, 0.7}) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r_iou({0, 0, 0, 0}) == 0.0);
  CHECK_THROWS_AS(r_iou({}), std::invalid_argument);
}

TEST_CASE("energy_score: exact formula points") {
  CHECK(energy_score(5.0, 5.0, 2) == 1.0);
  CHECK(energy_score(5.0, 5.0, 10) == 1.0);
  CHECK(energy_score(1.0, 2.0, 2) == doctest::Approx(1.2).epsilon(1e-12));
  // e_team = 1e10 * e_mean at base 10: 1 + 0.2*(-10) = -1 -> floored to 0
  CHECK(energy_score(1e10, 1.0, 10) == 0.0);
  CHECK_THROWS_AS(energy_score(-1.0, 1.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(energy_score(1.0, 1.0, 3), std::invalid_argument);
}

TEST_CASE("energy_score: monotone non-increasing in team energy") {
  double prev = 1e9;
  for (double e = 0.25; e <= 16.0; e *= 2) {
    const double es = energy_score(e, 4.0, 2);
    CHECK(es <= prev);
    prev = es;
  }
  CHECK(energy_score(4.0, 4.0, 2) == 1.0);
}

TEST_CASE("mean_energy") {
  CHECK(mean_energy({7.5}) == 7.5);
  CHECK(mean_energy({2, 4}) == 3.0);
  CHECK(mean_energy({3, 3, 3}) == 3.0);
  CHECK_THROWS_AS(mean_energy({}), std::invalid_argument);
}

TEST_CASE("total_score: form and published-row consistency") {
  CHECK(total_score(0.4, 1.0) == doctest::Approx(0.8));
  CHECK(total_score(0.0, 3.0) == 0.0);
  // Back-derive the energy score from a reference (R_IoU, TS) result pair
  // and confirm the formula reproduces the total.
  const double r = 0.731, ts = 1.504;
  const double es = ts / r - 1.0;
  CHECK(es >= 0.0);
  CHECK(es <= 1.2);
  CHECK(total_score(r, es) == doctest::Approx(ts).epsilon(1e-12));
}

TEST_CASE("ao / sr: counting conventions") {
  CHECK(ao({1.0, 1.0}) == 1.0);
  CHECK(sr({1.0, 1.0}, 0.9) == 1.0);
  CHECK(sr({0.6, 0.4}, 0.5) == 0.5);
  // Counting oracle: two of the three values exceed 0.75.
  CHECK(sr({0.8, 0.8, 0.2}, 0.75) == doctest::Approx(2.0 / 3.0));
  CHECK(ao({0.8, 0.8, 0.2}) == doctest::Approx(0.6));
  // boundary: strictly above
  CHECK(sr({0.5, 0.7}, 0.5) == 0.5);
  CHECK_THROWS_AS(sr({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(sr({0.5}, 1.5), std::invalid_argument);
}

TEST_CASE("sr: monotone non-increasing in threshold") {
  Rng rng(223);
  std::vector<double> ious;
  for (int i = 0; i < 100; ++i) ious.push_back(rng.uniform());
  double prev = 2.0;
  for (double th = 0.05; th < 1.0; th += 0.05) {
    const double v = sr(ious, th);
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("leaderboard: ordering invariant under common energy scaling") {
  std::vector<TeamResult> teams;
  Rng rng(227);
  for (int i = 0; i < 6; ++i) {
    TeamResult t;
    t.team_id = "team" + std::to_string(i);
    for (int k = 0; k < 10; ++k) t.ious.push_back(rng.uniform());
    t.energy_joules = rng.uniform(1.0, 20.0);
    teams.push_back(std::move(t));
  }
  auto rows1 = leaderboard(teams, 2);
  for (auto& t : teams) t.energy_joules *= 3.7;
  auto rows2 = leaderboard(teams, 2);
  REQUIRE(rows1.size() == rows2.size());
  for (size_t i = 0; i < rows1.size(); ++i) {
    CHECK(rows1[i].team_id == rows2[i].team_id);
    CHECK(rows1[i].ts == doctest::Approx(rows2[i].ts).epsilon(1e-12));
  }
}

TEST_CASE("leaderboard: equal-IoU teams ordered by energy") {
  std::vector<TeamResult> teams(2);
  teams[0].team_id = "hungry";
  teams[0].ious = {0.5, 0.5};
  teams[0].energy_joules = 8.0;
  teams[1].team_id = "frugal";
  teams[1].ious = {0.5, 0.5};
  teams[1].energy_joules = 4.0;
  auto rows = leaderboard(teams, 2);
  CHECK(rows[0].team_id == "frugal");
  // mean = 6; ES(frugal) = 1 + 0.2*log2(1.5), ES(hungry) = 1 + 0.2*log2(0.75)
  CHECK(rows[0].es == doctest::Approx(1.0 + 0.2 * std::log2(1.5)).epsilon(1e-12));
  CHECK(rows[1].es == doctest::Approx(1.0 + 0.2 * std::log2(0.75)).epsilon(1e-12));
}
