#include "pmdi/decoy_lp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace pmdi {

DecoyConstraintSet build_constraints(const ObservedStatistics& stats,
                                     Basis basis, int n_max, bool error_side,
                                     double slack_sigma) {
  if (n_max < 1 || n_max > stats.n_max)
    throw std::invalid_argument(
        "build_constraints: n_max exceeds the computed moments");

  DecoyConstraintSet cs;
  cs.basis = basis;
  cs.n_max = n_max;
  cs.error_side = error_side;
  cs.slack_sigma = slack_sigma;

  const int bi = basis == Basis::Z ? 0 : 1;
  for (int ba = 1; ba <= 3; ++ba) {
    for (int bb = 1; bb <= 3; ++bb) {
      const auto& row = stats.union_rows[bi][ba - 1][bb - 1];
      if (row.error_gain > row.gain + 3.0 * (row.gain_sigma + row.error_sigma))
        throw std::invalid_argument(
            "build_constraints: error-gain exceeds gain");

      DecoyRow r;
      r.band_a = ba;
      r.band_b = bb;
      r.coeff.resize((n_max + 1) * (n_max + 1));
      const auto& pa = stats.poisson_a[bi][ba - 1];
      const auto& pb = stats.poisson_b[bi][bb - 1];
      double csum = 0.0;
      for (int n = 0; n <= n_max; ++n)
        for (int m = 0; m <= n_max; ++m) {
          const double c = pa[n] * pb[m];
          r.coeff[n * (n_max + 1) + m] = c;
          csum += c;
        }
      r.tail = std::max(0.0, 1.0 - csum);
      if (error_side) {
        r.observed = std::min(row.error_gain, row.gain);
        r.sigma = row.error_sigma;
      } else {
        r.observed = row.gain;
        r.sigma = row.gain_sigma;
      }
      cs.rows.push_back(std::move(r));
    }
  }
  return cs;
}

namespace {

// Rows are scaled by their largest coefficient so the tableau stays O(1).
LpProblem to_lp(const DecoyConstraintSet& cs) {
  LpProblem p;
  const int nv = cs.n_vars();
  p.objective.assign(nv, 0.0);
  p.var_lo.assign(nv, 0.0);
  p.var_hi.assign(nv, 1.0);
  for (const DecoyRow& r : cs.rows) {
    double scale = 0.0;
    for (double c : r.coeff) scale = std::max(scale, c);
    if (scale <= 0.0) scale = 1.0;
    std::vector<double> row(nv);
    for (int j = 0; j < nv; ++j) row[j] = r.coeff[j] / scale;
    const double widen = cs.slack_sigma * r.sigma;
    const double hi = r.observed + widen;
    const double lo = r.observed - r.tail - widen;
    p.rows.push_back(std::move(row));
    p.row_hi.push_back(hi / scale);
    p.row_lo.push_back(std::max(lo, 0.0) / scale);
  }
  return p;
}

}  // namespace

YieldBounds solve_y11_lower(const DecoyConstraintSet& cs) {
  LpProblem p = to_lp(cs);
  p.objective[cs.var_index(1, 1)] = 1.0;
  const LpSolution sol = solve_lp(p);

  YieldBounds out;
  out.lp_status = sol.status;
  if (sol.status == LpStatus::Optimal) {
    out.y11_lower = std::clamp(sol.objective, 0.0, 1.0);
  } else {
    out.y11_lower = 0.0;  // no information, conservative
    out.conflicting_rows = sol.infeasible_rows;
  }
  return out;
}

YieldBounds solve_e11y11_upper(const DecoyConstraintSet& cs) {
  LpProblem p = to_lp(cs);
  p.objective[cs.var_index(1, 1)] = -1.0;  // maximize
  const LpSolution sol = solve_lp(p);

  YieldBounds out;
  out.lp_status = sol.status;
  if (sol.status == LpStatus::Optimal) {
    out.e11y11_upper = std::clamp(-sol.objective, 0.0, 1.0);
  } else {
    out.e11y11_upper = 1.0;  // no information, conservative
    out.conflicting_rows = sol.infeasible_rows;
  }
  return out;
}

double e11_upper_bound(double e11y11_upper, double y11_lower) {
  if (y11_lower <= 0.0) return 0.5;
  return std::min(0.5, e11y11_upper / y11_lower);
}

std::string dump_constraints(const DecoyConstraintSet& cs) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "basis=%s side=%s n_max=%d slack_sigma=%g\n",
                to_string(cs.basis), cs.error_side ? "QE" : "Q", cs.n_max,
                cs.slack_sigma);
  out += buf;
  for (const DecoyRow& r : cs.rows) {
    std::snprintf(buf, sizeof buf,
                  "band (%d,%d): observed=%.9e tail=%.3e sigma=%.3e\n",
                  r.band_a, r.band_b, r.observed, r.tail, r.sigma);
    out += buf;
    for (int n = 0; n <= cs.n_max; ++n) {
      out += "   ";
      for (int m = 0; m <= cs.n_max; ++m) {
        std::snprintf(buf, sizeof buf, " %.3e",
                      r.coeff[n * (cs.n_max + 1) + m]);
        out += buf;
      }
      out += "\n";
    }
  }
  return out;
}

}  // namespace pmdi
