#pragma once

#include <string>
#include <vector>

#include "pmdi/simplex.hpp"
#include "pmdi/statistics.hpp"

namespace pmdi {

/// One truncated series row per decoy band pair: the photon-number
/// coefficients <P_n><P_m> up to n_max, the observed value, and the slack
/// terms that make the truncation and the integration noise conservative.
struct DecoyRow {
  int band_a = 1, band_b = 1;
  std::vector<double> coeff;  // (n_max+1)^2, row-major in (n, m)
  double observed = 0.0;
  double tail = 0.0;   // series mass beyond the truncation
  double sigma = 0.0;  // integration error estimate of the observed value
};

struct DecoyConstraintSet {
  Basis basis = Basis::Z;
  int n_max = 8;
  bool error_side = false;
  double slack_sigma = 0.0;  // rows widened by slack_sigma * sigma each way
  std::vector<DecoyRow> rows;

  int var_index(int n, int m) const { return n * (n_max + 1) + m; }
  int n_vars() const { return (n_max + 1) * (n_max + 1); }
};

struct YieldBounds {
  double y11_lower = 0.0;
  double e11y11_upper = 1.0;
  LpStatus lp_status = LpStatus::Optimal;
  std::vector<int> conflicting_rows;  // set when infeasible
};

/// Builds the 9-row constraint set for one basis. `error_side` selects the
/// <QE> rows. Rejects statistics with <QE> exceeding <Q> beyond noise.
DecoyConstraintSet build_constraints(const ObservedStatistics& stats,
                                     Basis basis, int n_max,
                                     bool error_side = false,
                                     double slack_sigma = 0.0);

/// min Y_11 over the feasible set; a valid lower bound for any yields that
/// reproduce the observed gains.
YieldBounds solve_y11_lower(const DecoyConstraintSet& cs);

/// max e11*Y11 over the feasible set of the error-gain rows.
YieldBounds solve_e11y11_upper(const DecoyConstraintSet& cs);

/// Human-readable dump for debugging.
std::string dump_constraints(const DecoyConstraintSet& cs);

/// e11 upper bound from the two partial results, capped at the 50% ceiling;
/// a vanishing yield lower bound forces the cap.
double e11_upper_bound(double e11y11_upper, double y11_lower);

}  // namespace pmdi
