#include "pmdi/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pmdi {

const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    default: return "iteration-limit";
  }
}

namespace {

constexpr double kCostTol = 1e-9;
constexpr double kPivotTol = 1e-11;
constexpr double kFeasTol = 1e-8;
constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarState : unsigned char { AtLo, AtHi, Basic };

// Columns: [structural (n)] [range slacks s (m)] [artificials p, q (2m)].
// Constraints are A x - s + p - q = 0 with s carrying the row range.
class Tableau {
 public:
  explicit Tableau(const LpProblem& prob)
      : n_(prob.n_vars()), m_(prob.n_rows()), ncols_(n_ + 3 * m_) {
    lo_.resize(ncols_);
    hi_.resize(ncols_);
    state_.resize(ncols_, VarState::AtLo);
    cost_.assign(ncols_, 0.0);
    t_.assign(static_cast<std::size_t>(m_) * ncols_, 0.0);
    basis_.resize(m_);
    beta_.resize(m_);

    for (int j = 0; j < n_; ++j) {
      lo_[j] = prob.var_lo[j];
      hi_[j] = prob.var_hi[j];
    }
    for (int i = 0; i < m_; ++i) {
      lo_[n_ + i] = prob.row_lo[i];
      hi_[n_ + i] = prob.row_hi[i];
      lo_[n_ + m_ + i] = 0.0;
      hi_[n_ + m_ + i] = kInf;
      lo_[n_ + 2 * m_ + i] = 0.0;
      hi_[n_ + 2 * m_ + i] = kInf;
    }

    for (int i = 0; i < m_; ++i) {
      double* row = t(i);
      for (int j = 0; j < n_; ++j) row[j] = prob.rows[i][j];
      row[n_ + i] = -1.0;          // s
      row[n_ + m_ + i] = 1.0;      // p
      row[n_ + 2 * m_ + i] = -1.0; // q
    }

    // Start with structurals at their lower bound. Rows whose value fits the
    // range get the slack basic; the rest get one artificial basic.
    for (int i = 0; i < m_; ++i) {
      double v = 0.0;
      for (int j = 0; j < n_; ++j) v += t(i)[j] * lo_[j];
      if (v >= lo_[n_ + i] && v <= hi_[n_ + i]) {
        make_basic(i, n_ + i, v);
      } else if (v < lo_[n_ + i]) {
        // s at its lower bound, p = s - v > 0 basic
        state_[n_ + i] = VarState::AtLo;
        make_basic(i, n_ + m_ + i, lo_[n_ + i] - v);
      } else {
        state_[n_ + i] = VarState::AtHi;
        make_basic(i, n_ + 2 * m_ + i, v - hi_[n_ + i]);
      }
    }
  }

  LpStatus run_phase1(int max_iters, int& used) {
    std::fill(cost_.begin(), cost_.end(), 0.0);
    for (int i = 0; i < m_; ++i)
      cost_[n_ + m_ + i] = cost_[n_ + 2 * m_ + i] = 1.0;
    return iterate(max_iters, used);
  }

  LpStatus run_phase2(const std::vector<double>& obj, int max_iters,
                      int& used) {
    std::fill(cost_.begin(), cost_.end(), 0.0);
    for (int j = 0; j < n_; ++j) cost_[j] = obj[j];
    // freeze artificials at zero
    for (int i = 0; i < m_; ++i) {
      hi_[n_ + m_ + i] = 0.0;
      hi_[n_ + 2 * m_ + i] = 0.0;
    }
    return iterate(max_iters, used);
  }

  double objective_value() const {
    double v = 0.0;
    for (int j = 0; j < ncols_; ++j) v += cost_[j] * value_of(j);
    return v;
  }

  double value_of(int j) const {
    switch (state_[j]) {
      case VarState::AtLo: return lo_[j];
      case VarState::AtHi: return hi_[j];
      default:
        for (int i = 0; i < m_; ++i)
          if (basis_[i] == j) return beta_[i];
        return 0.0;
    }
  }

  std::vector<double> structural_values() const {
    std::vector<double> x(n_);
    for (int j = 0; j < n_; ++j) x[j] = value_of(j);
    // basic lookups above are O(m); fine at this scale, but hoist basics
    for (int i = 0; i < m_; ++i)
      if (basis_[i] < n_) x[basis_[i]] = beta_[i];
    return x;
  }

  std::vector<int> violated_rows() const {
    std::vector<int> rows;
    for (int i = 0; i < m_; ++i) {
      const int b = basis_[i];
      if (b >= n_ + m_ && beta_[i] > kFeasTol) rows.push_back((b - n_) % m_);
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    return rows;
  }

 private:
  double* t(int i) { return t_.data() + static_cast<std::size_t>(i) * ncols_; }
  const double* t(int i) const {
    return t_.data() + static_cast<std::size_t>(i) * ncols_;
  }

  void make_basic(int row, int col, double value) {
    basis_[row] = col;
    beta_[row] = value;
    state_[col] = VarState::Basic;
    double* r = t(row);
    const double piv = r[col];
    for (int j = 0; j < ncols_; ++j) r[j] /= piv;
    // initial basis columns are +/- unit vectors, no cross elimination needed
  }

  double reduced_cost(int j) const {
    double d = cost_[j];
    for (int i = 0; i < m_; ++i) d -= cost_[basis_[i]] * t(i)[j];
    return d;
  }

  LpStatus iterate(int max_iters, int& used) {
    for (; used < max_iters; ++used) {
      // Bland: smallest eligible index enters
      int enter = -1;
      double dir = 0.0;
      for (int j = 0; j < ncols_; ++j) {
        if (state_[j] == VarState::Basic || lo_[j] == hi_[j]) continue;
        const double d = reduced_cost(j);
        if (state_[j] == VarState::AtLo && d < -kCostTol) {
          enter = j;
          dir = 1.0;
          break;
        }
        if (state_[j] == VarState::AtHi && d > kCostTol) {
          enter = j;
          dir = -1.0;
          break;
        }
      }
      if (enter < 0) return LpStatus::Optimal;

      // ratio test
      double step = hi_[enter] - lo_[enter];  // bound-to-bound flip
      int leave_row = -1;
      double leave_bound = 0.0;
      for (int i = 0; i < m_; ++i) {
        const double g = dir * t(i)[enter];
        if (std::abs(g) < kPivotTol) continue;
        double limit;
        double bound;
        if (g > 0.0) {
          bound = lo_[basis_[i]];
          limit = (beta_[i] - bound) / g;
        } else {
          bound = hi_[basis_[i]];
          limit = (beta_[i] - bound) / g;
        }
        if (limit < -1e-12) limit = 0.0;
        if (limit < step - 1e-15 ||
            (leave_row >= 0 && std::abs(limit - step) <= 1e-15 &&
             basis_[i] < basis_[leave_row])) {
          step = limit;
          leave_row = i;
          leave_bound = bound;
        }
      }

      if (!std::isfinite(step)) return LpStatus::Unbounded;

      if (leave_row < 0) {
        // entering variable runs to its other bound
        for (int i = 0; i < m_; ++i) beta_[i] -= dir * step * t(i)[enter];
        state_[enter] =
            state_[enter] == VarState::AtLo ? VarState::AtHi : VarState::AtLo;
        continue;
      }

      const int leave = basis_[leave_row];
      const double enter_start =
          state_[enter] == VarState::AtLo ? lo_[enter] : hi_[enter];
      for (int i = 0; i < m_; ++i)
        if (i != leave_row) beta_[i] -= dir * step * t(i)[enter];
      beta_[leave_row] = enter_start + dir * step;
      state_[leave] =
          (leave_bound == lo_[leave]) ? VarState::AtLo : VarState::AtHi;
      state_[enter] = VarState::Basic;
      basis_[leave_row] = enter;

      double* prow = t(leave_row);
      const double piv = prow[enter];
      for (int j = 0; j < ncols_; ++j) prow[j] /= piv;
      for (int i = 0; i < m_; ++i) {
        if (i == leave_row) continue;
        double* r = t(i);
        const double f = r[enter];
        if (f == 0.0) continue;
        for (int j = 0; j < ncols_; ++j) r[j] -= f * prow[j];
        r[enter] = 0.0;
      }
    }
    return LpStatus::IterationLimit;
  }

  int n_, m_, ncols_;
  std::vector<double> lo_, hi_, cost_, t_, beta_;
  std::vector<int> basis_;
  std::vector<VarState> state_;
};

}  // namespace

LpSolution solve_lp(const LpProblem& p, int max_iters) {
  const int n = p.n_vars(), m = p.n_rows();
  if (static_cast<int>(p.var_lo.size()) != n ||
      static_cast<int>(p.var_hi.size()) != n ||
      static_cast<int>(p.row_lo.size()) != m ||
      static_cast<int>(p.row_hi.size()) != m)
    throw std::invalid_argument("solve_lp: inconsistent problem sizes");
  for (int i = 0; i < m; ++i)
    if (static_cast<int>(p.rows[i].size()) != n)
      throw std::invalid_argument("solve_lp: row length mismatch");
  for (int j = 0; j < n; ++j)
    if (!(p.var_lo[j] <= p.var_hi[j]))
      throw std::invalid_argument("solve_lp: empty variable bound");
  for (int i = 0; i < m; ++i)
    if (!(p.row_lo[i] <= p.row_hi[i]))
      throw std::invalid_argument("solve_lp: empty row range");

  Tableau tab(p);
  LpSolution sol;
  int used = 0;

  LpStatus st = tab.run_phase1(max_iters, used);
  if (st != LpStatus::Optimal) {
    sol.status = st;
    return sol;
  }
  if (tab.objective_value() > kFeasTol) {
    sol.status = LpStatus::Infeasible;
    sol.infeasible_rows = tab.violated_rows();
    return sol;
  }

  st = tab.run_phase2(p.objective, max_iters, used);
  sol.status = st;
  if (st == LpStatus::Optimal || st == LpStatus::IterationLimit) {
    sol.x = tab.structural_values();
    sol.objective = 0.0;
    for (int j = 0; j < n; ++j) sol.objective += p.objective[j] * sol.x[j];
  }
  return sol;
}

}  // namespace pmdi
