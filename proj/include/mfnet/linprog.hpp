#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "mfnet/common.hpp"

namespace mfnet {

/// maximize objective . x  subject to  rows[i] . x <= rhs[i],  x >= 0
struct LinearProgram {
  int num_vars = 0;
  std::vector<double> objective;
  std::vector<std::vector<double>> rows;
  std::vector<double> rhs;

  void add_row(std::vector<double> coeffs, double bound) {
    rows.push_back(std::move(coeffs));
    rhs.push_back(bound);
  }
};

struct LpSolution {
  enum class Status { optimal, infeasible, unbounded, iteration_limit };
  Status status = Status::infeasible;
  std::vector<double> x;
  double objective = 0.0;
};

/// Dense two-phase primal simplex with Bland's rule. Intended for the small
/// (hundreds of rows) programs produced by the Dinkelbach inner step.
class SimplexSolver {
 public:
  explicit SimplexSolver(const LinearProgram& lp) : lp_(lp) {}

  LpSolution solve(std::size_t max_pivots = 200000) {
    const int m = static_cast<int>(lp_.rows.size());
    const int n = lp_.num_vars;
    // Columns: structural 0..n-1, slacks n..n+m-1, artificials after that.
    num_art_ = 0;
    std::vector<int> art_col(static_cast<std::size_t>(m), -1);
    std::vector<double> scale(static_cast<std::size_t>(m), 1.0);
    std::vector<int> sign(static_cast<std::size_t>(m), 1);
    for (int i = 0; i < m; ++i) {
      double mx = std::abs(lp_.rhs[static_cast<std::size_t>(i)]);
      for (double a : lp_.rows[static_cast<std::size_t>(i)]) mx = std::max(mx, std::abs(a));
      scale[static_cast<std::size_t>(i)] = mx > 0.0 ? 1.0 / mx : 1.0;
      if (lp_.rhs[static_cast<std::size_t>(i)] * scale[static_cast<std::size_t>(i)] < 0.0) {
        sign[static_cast<std::size_t>(i)] = -1;
        art_col[static_cast<std::size_t>(i)] = n + m + num_art_;
        ++num_art_;
      }
    }
    cols_ = n + m + num_art_;
    width_ = cols_ + 1;
    tab_.assign(static_cast<std::size_t>(m + 1) * width_, 0.0);
    basis_.assign(static_cast<std::size_t>(m), -1);

    for (int i = 0; i < m; ++i) {
      const double s = scale[static_cast<std::size_t>(i)] * sign[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) at(i, j) = lp_.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * s;
      at(i, n + i) = static_cast<double>(sign[static_cast<std::size_t>(i)]);
      rhs(i) = lp_.rhs[static_cast<std::size_t>(i)] * s;
      if (art_col[static_cast<std::size_t>(i)] >= 0) {
        at(i, art_col[static_cast<std::size_t>(i)]) = 1.0;
        basis_[static_cast<std::size_t>(i)] = art_col[static_cast<std::size_t>(i)];
      } else {
        basis_[static_cast<std::size_t>(i)] = n + i;
      }
    }

    LpSolution sol;
    if (num_art_ > 0) {
      // Phase 1: maximize -sum(artificials).
      for (int j = 0; j < cols_; ++j) at(m, j) = j >= n + m ? 1.0 : 0.0;
      rhs(m) = 0.0;
      for (int i = 0; i < m; ++i)
        if (basis_[static_cast<std::size_t>(i)] >= n + m) price_out(i);
      if (!pivot_loop(m, n + m + num_art_, max_pivots)) {
        sol.status = LpSolution::Status::iteration_limit;
        return sol;
      }
      if (rhs(m) < -1e-7) {
        sol.status = LpSolution::Status::infeasible;
        return sol;
      }
      // Drive leftover artificials out of the basis where possible.
      for (int i = 0; i < m; ++i) {
        if (basis_[static_cast<std::size_t>(i)] < n + m) continue;
        int enter = -1;
        for (int j = 0; j < n + m; ++j)
          if (std::abs(at(i, j)) > 1e-9) { enter = j; break; }
        if (enter >= 0) pivot(i, enter);
      }
    }

    // Phase 2.
    for (int j = 0; j < cols_; ++j) at(m, j) = j < n ? -lp_.objective[static_cast<std::size_t>(j)] : 0.0;
    rhs(m) = 0.0;
    for (int i = 0; i < m; ++i)
      if (std::abs(at(m, basis_[static_cast<std::size_t>(i)])) > 0.0) price_out(i);
    const int limit_col = n + m;  // artificials barred from entering
    if (!pivot_loop(m, limit_col, max_pivots)) {
      sol.status = unbounded_ ? LpSolution::Status::unbounded : LpSolution::Status::iteration_limit;
      return sol;
    }
    if (unbounded_) {
      sol.status = LpSolution::Status::unbounded;
      return sol;
    }

    sol.status = LpSolution::Status::optimal;
    sol.x.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < m; ++i) {
      const int b = basis_[static_cast<std::size_t>(i)];
      if (b < n) sol.x[static_cast<std::size_t>(b)] = rhs(i);
    }
    sol.objective = 0.0;
    for (int j = 0; j < n; ++j)
      sol.objective += lp_.objective[static_cast<std::size_t>(j)] * sol.x[static_cast<std::size_t>(j)];
    return sol;
  }

 private:
  double& at(int r, int c) { return tab_[static_cast<std::size_t>(r) * width_ + c]; }
  double& rhs(int r) { return tab_[static_cast<std::size_t>(r) * width_ + cols_]; }

  void price_out(int row) {
    const int m = static_cast<int>(lp_.rows.size());
    const int b = basis_[static_cast<std::size_t>(row)];
    const double factor = at(m, b);
    if (factor == 0.0) return;
    for (int j = 0; j <= cols_; ++j)
      tab_[static_cast<std::size_t>(m) * width_ + j] -= factor * tab_[static_cast<std::size_t>(row) * width_ + j];
  }

  void pivot(int row, int col) {
    const int m = static_cast<int>(lp_.rows.size());
    const double piv = at(row, col);
    for (int j = 0; j <= cols_; ++j) tab_[static_cast<std::size_t>(row) * width_ + j] /= piv;
    for (int r = 0; r <= m; ++r) {
      if (r == row) continue;
      const double f = at(r, col);
      if (f == 0.0) continue;
      for (int j = 0; j <= cols_; ++j)
        tab_[static_cast<std::size_t>(r) * width_ + j] -= f * tab_[static_cast<std::size_t>(row) * width_ + j];
    }
    basis_[static_cast<std::size_t>(row)] = col;
  }

  /// Bland-rule pivoting until optimality; entering candidates limited to
  /// columns below `col_limit`.
  bool pivot_loop(int obj_row, int col_limit, std::size_t max_pivots) {
    const int m = static_cast<int>(lp_.rows.size());
    unbounded_ = false;
    for (std::size_t iter = 0; iter < max_pivots; ++iter) {
      int enter = -1;
      for (int j = 0; j < col_limit; ++j) {
        if (at(obj_row, j) < -1e-10) { enter = j; break; }
      }
      if (enter < 0) return true;  // optimal
      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        const double a = at(i, enter);
        if (a > 1e-11) {
          const double ratio = rhs(i) / a;
          if (ratio < best - 1e-12 ||
              (ratio < best + 1e-12 && (leave < 0 || basis_[static_cast<std::size_t>(i)] <
                                                         basis_[static_cast<std::size_t>(leave)]))) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) {
        unbounded_ = true;
        return false;
      }
      pivot(leave, enter);
    }
    return false;
  }

  const LinearProgram& lp_;
  std::vector<double> tab_;
  std::vector<int> basis_;
  int cols_ = 0;
  int width_ = 0;
  int num_art_ = 0;
  bool unbounded_ = false;
};

inline LpSolution solve_lp(const LinearProgram& lp) { return SimplexSolver(lp).solve(); }

}  // namespace mfnet
