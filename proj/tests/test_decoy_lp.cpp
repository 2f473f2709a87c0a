#include "doctest.h"

#include <cmath>
#include <random>

#include "pmdi/decoy_lp.hpp"

using namespace pmdi;

namespace {

double poisson_term(int n, double mu) {
  double p = std::exp(-mu);
  for (int k = 1; k <= n; ++k) p *= mu / k;
  return p;
}

// statistics generated from known point-intensity yields, so the ground
// truth is available to compare the bounds against
struct Synthetic {
  ObservedStatistics stats;
  double y11 = 0.0, e11y11 = 0.0;
};

Synthetic make_synthetic(std::uint64_t seed, int n_max,
                         std::array<double, 3> mus, bool half_errors = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n_gen = 24;  // effectively exact for mu <= 1.5

  std::vector<double> y(n_gen * n_gen), ey(n_gen * n_gen);
  for (int i = 0; i < n_gen * n_gen; ++i) {
    y[i] = u(rng);
    ey[i] = half_errors ? 0.5 * y[i] : y[i] * 0.5 * u(rng);
  }

  Synthetic out;
  out.stats.n_max = n_max;
  out.y11 = y[1 * n_gen + 1];
  out.e11y11 = ey[1 * n_gen + 1];

  for (int bi = 0; bi < 2; ++bi) {
    for (int band = 1; band <= 3; ++band) {
      std::vector<double> mom(n_max + 1);
      for (int n = 0; n <= n_max; ++n) mom[n] = poisson_term(n, mus[band - 1]);
      out.stats.poisson_a[bi][band - 1] = mom;
      out.stats.poisson_b[bi][band - 1] = mom;
    }
    for (int ba = 1; ba <= 3; ++ba)
      for (int bb = 1; bb <= 3; ++bb) {
        double q = 0.0, qe = 0.0, csum = 0.0;
        for (int n = 0; n < n_gen; ++n)
          for (int m = 0; m < n_gen; ++m) {
            const double c =
                poisson_term(n, mus[ba - 1]) * poisson_term(m, mus[bb - 1]);
            q += c * y[n * n_gen + m];
            qe += c * ey[n * n_gen + m];
            if (n <= n_max && m <= n_max) csum += c;
          }
        auto& row = out.stats.union_rows[bi][ba - 1][bb - 1];
        row.gain = q;
        row.error_gain = qe;
        row.gain_sigma = 0.0;
        row.error_sigma = 0.0;
        row.converged = true;
        out.stats.series_tail[bi][ba - 1][bb - 1] = std::max(0.0, 1.0 - csum);
      }
  }
  return out;
}

}  // namespace

TEST_CASE("constraints reject inconsistent statistics") {
  Synthetic s = make_synthetic(1, 6, {0.05, 0.2, 0.6});
  s.stats.union_rows[0][1][1].error_gain =
      s.stats.union_rows[0][1][1].gain * 1.5;
  CHECK_THROWS_AS(build_constraints(s.stats, Basis::Z, 6, true),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_constraints(s.stats, Basis::Z, 20, false),
                  std::invalid_argument);  // beyond computed moments
}

TEST_CASE("single point-intensity row reduces to the closed form") {
  // with one row, the loosest completion sets every other yield to one
  const int n_max = 4;
  const double mu_a = 0.4, mu_b = 0.3;
  DecoyConstraintSet cs;
  cs.n_max = n_max;
  DecoyRow r;
  r.coeff.resize((n_max + 1) * (n_max + 1));
  double csum = 0.0, c11 = 0.0;
  for (int n = 0; n <= n_max; ++n)
    for (int m = 0; m <= n_max; ++m) {
      const double c = poisson_term(n, mu_a) * poisson_term(m, mu_b);
      r.coeff[n * (n_max + 1) + m] = c;
      csum += c;
      if (n == 1 && m == 1) c11 = c;
    }
  r.tail = std::max(0.0, 1.0 - csum);
  r.observed = 0.9;  // high gain forces a positive bound
  cs.rows.push_back(r);

  const YieldBounds b = solve_y11_lower(cs);
  REQUIRE(b.lp_status == LpStatus::Optimal);
  const double expect = (r.observed - r.tail - (csum - c11)) / c11;
  CHECK(b.y11_lower == doctest::Approx(std::max(0.0, expect)).epsilon(1e-9));
}

TEST_CASE("synthetic ground truth stays feasible and bounded") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Synthetic s =
        make_synthetic(seed, 8, {0.02 + 0.01 * (seed % 3), 0.2, 0.7});
    const auto q = build_constraints(s.stats, Basis::Z, 8, false);
    const auto e = build_constraints(s.stats, Basis::X, 8, true);
    const YieldBounds lb = solve_y11_lower(q);
    const YieldBounds ub = solve_e11y11_upper(e);
    REQUIRE(lb.lp_status == LpStatus::Optimal);
    REQUIRE(ub.lp_status == LpStatus::Optimal);
    CHECK(lb.y11_lower <= s.y11 + 1e-9);
    CHECK(ub.e11y11_upper >= s.e11y11 - 1e-9);
    // with three decoys the lower bound is informative
    CHECK(lb.y11_lower > 0.0);
  }
}

TEST_CASE("half-error statistics bound e11y11 by half the yield bound") {
  const Synthetic s = make_synthetic(5, 8, {0.05, 0.2, 0.6}, true);
  const auto q = build_constraints(s.stats, Basis::Z, 8, false);
  const auto e = build_constraints(s.stats, Basis::Z, 8, true);
  const YieldBounds lb = solve_y11_lower(q);
  const YieldBounds ub = solve_e11y11_upper(e);
  CHECK(ub.e11y11_upper >= 0.5 * lb.y11_lower - 1e-9);
}

TEST_CASE("degenerate observations give degenerate bounds") {
  Synthetic s = make_synthetic(2, 6, {0.05, 0.2, 0.6});
  for (int bi = 0; bi < 2; ++bi)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        s.stats.union_rows[bi][a][b].gain = 0.0;
        s.stats.union_rows[bi][a][b].error_gain = 0.0;
      }
  const auto q = build_constraints(s.stats, Basis::Z, 6, false);
  const auto e = build_constraints(s.stats, Basis::Z, 6, true);
  CHECK(solve_y11_lower(q).y11_lower == 0.0);
  CHECK(solve_e11y11_upper(e).e11y11_upper == doctest::Approx(0.0));
}

TEST_CASE("widening the rows keeps the truth feasible") {
  // adding sigma-slack can only relax the programme
  Synthetic s = make_synthetic(9, 8, {0.05, 0.2, 0.6});
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      s.stats.union_rows[0][a][b].gain_sigma =
          1e-3 * s.stats.union_rows[0][a][b].gain;
  const auto tight = build_constraints(s.stats, Basis::Z, 8, false, 0.0);
  const auto wide = build_constraints(s.stats, Basis::Z, 8, false, 3.0);
  const double lb_tight = solve_y11_lower(tight).y11_lower;
  const double lb_wide = solve_y11_lower(wide).y11_lower;
  CHECK(lb_wide <= lb_tight + 1e-12);
  CHECK(lb_wide <= s.y11 + 1e-9);
}

TEST_CASE("series tail shrinks as the truncation grows") {
  const Synthetic s8 = make_synthetic(3, 10, {0.05, 0.2, 0.6});
  const auto c8 = build_constraints(s8.stats, Basis::Z, 8, false);
  const auto c10 = build_constraints(s8.stats, Basis::Z, 10, false);
  for (std::size_t i = 0; i < c8.rows.size(); ++i)
    CHECK(c10.rows[i].tail <= c8.rows[i].tail + 1e-15);
}

TEST_CASE("bounds are deterministic") {
  const Synthetic s = make_synthetic(12, 8, {0.05, 0.2, 0.6});
  const auto q = build_constraints(s.stats, Basis::Z, 8, false);
  const YieldBounds a = solve_y11_lower(q);
  const YieldBounds b = solve_y11_lower(q);
  CHECK(a.y11_lower == b.y11_lower);
}

TEST_CASE("e11 ceiling") {
  CHECK(e11_upper_bound(0.2, 0.0) == 0.5);
  CHECK(e11_upper_bound(1.0, 0.5) == 0.5);
  CHECK(e11_upper_bound(0.01, 0.5) == doctest::Approx(0.02));
}

TEST_CASE("constraint dump is readable") {
  const Synthetic s = make_synthetic(4, 3, {0.05, 0.2, 0.6});
  const auto q = build_constraints(s.stats, Basis::X, 3, false);
  const std::string text = dump_constraints(q);
  CHECK(text.find("basis=X") != std::string::npos);
  CHECK(text.find("band (3,3)") != std::string::npos);
}
