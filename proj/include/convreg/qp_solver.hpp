#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <vector>

namespace convreg {

struct SolverTolerances {
  double feas_tol = 1e-6;
  double kkt_tol = 1e-6;
  int max_iterations = 200000;
};

enum class QpStatus { optimal, infeasible, max_iterations };

const char* to_string(QpStatus status);

/// Convex quadratic program in canonical form
///
///   minimize    1/2 z^T Q z + c^T z + constant
///   subject to  a_k^T z <= b_k,   k = 1..m
///
/// Q must be symmetric positive semidefinite; strict convexity is not
/// required (the regression programs built on top are rank-deficient in the
/// slope variables). Constraint rows are stored sparsely because the
/// regression builders emit O(n^2) rows with at most d+2 nonzeros each.
class QpProblem {
 public:
  enum class PsdCheck {
    verify,    ///< check symmetry and smallest eigenvalue >= -1e-8
    certified  ///< caller guarantees PSD by construction
  };

  QpProblem(Eigen::MatrixXd quadratic, Eigen::VectorXd linear, double constant = 0.0,
            PsdCheck check = PsdCheck::verify);

  void reserve_constraints(std::size_t rows, std::size_t nonzeros);
  void add_constraint(const Eigen::VectorXd& row, double rhs);
  void add_constraint(const std::vector<int>& index, const std::vector<double>& coeff, double rhs);

  int num_vars() const { return static_cast<int>(linear_.size()); }
  int num_constraints() const { return static_cast<int>(rhs_.size()); }

  const Eigen::MatrixXd& quadratic() const { return quadratic_; }
  const Eigen::VectorXd& linear() const { return linear_; }
  double constant() const { return constant_; }

  double rhs(int k) const { return rhs_[k]; }
  const std::vector<double>& rhs_all() const { return rhs_; }
  Eigen::VectorXd constraint_row(int k) const;
  double row_dot(int k, const Eigen::VectorXd& z) const;

  double objective_value(const Eigen::VectorXd& z) const;

  /// out = A z over all constraint rows.
  void multiply(const Eigen::VectorXd& z, Eigen::VectorXd& out) const;
  /// out = A^T w.
  void multiply_transpose(const Eigen::VectorXd& w, Eigen::VectorXd& out) const;

  /// Text dump: "QP num_vars num_constraints", Q rows, c, then one line per
  /// constraint (dense coefficients followed by the rhs). Consumed by the
  /// oracle scripts in the test suite.
  void dump(std::ostream& os) const;

  const std::vector<int>& row_offsets() const { return offsets_; }
  const std::vector<int>& col_indices() const { return cols_; }
  const std::vector<double>& coefficients() const { return vals_; }

 private:
  Eigen::MatrixXd quadratic_;
  Eigen::VectorXd linear_;
  double constant_ = 0.0;
  // CSR rows
  std::vector<int> offsets_{0};
  std::vector<int> cols_;
  std::vector<double> vals_;
  std::vector<double> rhs_;
};

struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd multipliers;  ///< inequality duals, >= 0 at optimality
  double objective = 0.0;
  QpStatus status = QpStatus::max_iterations;
  double primal_residual = 0.0;        ///< max constraint violation, floored at 0
  double stationarity_residual = 0.0;  ///< |Q z + c + A^T y|_inf
  int iterations = 0;
  bool polished = false;
  /// Merit (max of the two residuals) of the iterate the solver would return
  /// if stopped at each outer check; nonincreasing by construction since the
  /// solver keeps the best iterate seen.
  std::vector<double> merit_history;
};

/// Operator-splitting solve (ADMM with an active-set polish step).
/// Deterministic: identical inputs produce identical outputs.
QpSolution solve_qp(const QpProblem& problem, const SolverTolerances& tol = {});

/// max_k (a_k^T z - b_k) floored at 0; throws std::invalid_argument on a
/// dimension mismatch.
double check_feasible(const QpProblem& problem, const Eigen::VectorXd& z);

}  // namespace convreg
