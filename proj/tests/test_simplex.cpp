#include "doctest.h"

#include <cmath>
#include <random>

#include "pmdi/simplex.hpp"

using namespace pmdi;

TEST_CASE("small known programs") {
  // min x + y subject to x + y >= 1 on the unit box
  LpProblem p;
  p.objective = {1.0, 1.0};
  p.rows = {{1.0, 1.0}};
  p.row_lo = {1.0};
  p.row_hi = {2.0};
  p.var_lo = {0.0, 0.0};
  p.var_hi = {1.0, 1.0};
  LpSolution s = solve_lp(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(1.0));

  // maximize x (as min -x) against a ranged row
  p.objective = {-1.0, 0.0};
  s = solve_lp(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.x[0] == doctest::Approx(1.0));

  // equality row pinning the solution
  p.objective = {1.0, -1.0};
  p.rows = {{1.0, 1.0}, {1.0, -1.0}};
  p.row_lo = {1.0, 0.25};
  p.row_hi = {1.0, 0.25};
  s = solve_lp(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.x[0] == doctest::Approx(0.625));
  CHECK(s.x[1] == doctest::Approx(0.375));
}

TEST_CASE("infeasible systems are flagged with their rows") {
  LpProblem p;
  p.objective = {0.0, 0.0};
  p.rows = {{1.0, 1.0}, {1.0, 1.0}};
  p.row_lo = {1.5, 0.0};
  p.row_hi = {2.0, 0.5};  // cannot satisfy both
  p.var_lo = {0.0, 0.0};
  p.var_hi = {1.0, 1.0};
  const LpSolution s = solve_lp(p);
  CHECK(s.status == LpStatus::Infeasible);
  CHECK_FALSE(s.infeasible_rows.empty());
}

TEST_CASE("bound flips without pivots are handled") {
  // optimum at the upper bound of a variable that never enters the basis
  LpProblem p;
  p.objective = {-3.0, 1.0};
  p.rows = {{0.0, 1.0}};
  p.row_lo = {0.0};
  p.row_hi = {1.0};
  p.var_lo = {0.0, 0.0};
  p.var_hi = {2.0, 1.0};
  const LpSolution s = solve_lp(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.x[0] == doctest::Approx(2.0));
  CHECK(s.x[1] == doctest::Approx(0.0));
}

TEST_CASE("solutions never beat a feasible certificate") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 60; ++inst) {
    const int n = 4 + static_cast<int>(u(rng) * 8);
    const int m = 2 + static_cast<int>(u(rng) * 5);
    LpProblem p;
    p.var_lo.assign(n, 0.0);
    p.var_hi.assign(n, 1.0);
    p.objective.resize(n);
    std::vector<double> cert(n);
    for (int j = 0; j < n; ++j) {
      p.objective[j] = 2.0 * u(rng) - 1.0;
      cert[j] = u(rng);
    }
    for (int i = 0; i < m; ++i) {
      std::vector<double> row(n);
      double v = 0.0;
      for (int j = 0; j < n; ++j) {
        row[j] = 2.0 * u(rng) - 1.0;
        v += row[j] * cert[j];
      }
      p.rows.push_back(row);
      p.row_lo.push_back(v - 0.1 * u(rng));
      p.row_hi.push_back(v + 0.1 * u(rng));
    }
    const LpSolution s = solve_lp(p);
    REQUIRE(s.status == LpStatus::Optimal);
    double cert_obj = 0.0;
    for (int j = 0; j < n; ++j) cert_obj += p.objective[j] * cert[j];
    CHECK(s.objective <= cert_obj + 1e-8);

    // and the reported point satisfies the constraints
    for (int i = 0; i < m; ++i) {
      double v = 0.0;
      for (int j = 0; j < n; ++j) v += p.rows[i][j] * s.x[j];
      CHECK(v >= p.row_lo[i] - 1e-7);
      CHECK(v <= p.row_hi[i] + 1e-7);
    }
  }
}

TEST_CASE("identical problems give identical pivots") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LpProblem p;
  const int n = 10, m = 4;
  p.var_lo.assign(n, 0.0);
  p.var_hi.assign(n, 1.0);
  p.objective.resize(n);
  for (int j = 0; j < n; ++j) p.objective[j] = u(rng) - 0.5;
  for (int i = 0; i < m; ++i) {
    std::vector<double> row(n);
    for (int j = 0; j < n; ++j) row[j] = u(rng);
    p.rows.push_back(row);
    p.row_lo.push_back(0.5);
    p.row_hi.push_back(3.0);
  }
  const LpSolution a = solve_lp(p);
  const LpSolution b = solve_lp(p);
  REQUIRE(a.status == LpStatus::Optimal);
  CHECK(a.objective == b.objective);
  CHECK(a.x == b.x);
}
