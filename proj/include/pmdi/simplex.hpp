#pragma once

#include <vector>

namespace pmdi {

/// minimize c.x  subject to  row_lo <= A x <= row_hi,  var_lo <= x <= var_hi
///
/// Dense two-phase simplex with bounded variables and Bland's rule, so the
/// pivot sequence (and therefore the solution) is a pure function of the
/// input. Intended for small, well-scaled systems.
struct LpProblem {
  std::vector<double> objective;
  std::vector<std::vector<double>> rows;
  std::vector<double> row_lo, row_hi;
  std::vector<double> var_lo, var_hi;

  int n_vars() const { return static_cast<int>(objective.size()); }
  int n_rows() const { return static_cast<int>(rows.size()); }
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

const char* to_string(LpStatus s);

struct LpSolution {
  LpStatus status = LpStatus::Optimal;
  double objective = 0.0;
  std::vector<double> x;
  std::vector<int> infeasible_rows;  // rows still violated when Infeasible
};

LpSolution solve_lp(const LpProblem& p, int max_iters = 50000);

}  // namespace pmdi
