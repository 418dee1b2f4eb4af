#pragma once

// Independent reference implementations used to cross-check the solver and
// the estimators. Nothing here shares code with the library's solve paths.

#include <Eigen/Core>

#include "convreg/estimators.hpp"
#include "convreg/qp_solver.hpp"
#include "convreg/rng.hpp"

namespace convreg::testing {

struct DualPgdResult {
  Eigen::VectorXd z;
  double objective = 0.0;  // primal objective at the recovered point
  double gap = 0.0;        // |primal - dual|, certifies oracle convergence
  int iterations = 0;
};

/// Projected gradient ascent on the dual of the inequality QP (projection =
/// clamp to the nonnegative orthant), run to stall. Requires positive
/// definite Q and small problems; the primal is recovered through
/// z = -Q^{-1}(c + A^T y).
DualPgdResult dual_pgd_oracle(const QpProblem& problem, int max_iterations = 2000000);

/// Exhaustive active-set enumeration for the one-dimensional convex
/// least-squares projection: minimizes |y - f|^2 subject to nondecreasing
/// secant slopes over strictly increasing abscissae. Cost 2^(n-2) subsets.
Eigen::VectorXd convex_lse_oracle(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Smallest u on a grid for which a convex interpolant of (x, y) with all
/// subgradients in [-u, u] exists, decided through the full pairwise
/// constraint system. Returns the first feasible grid value.
double min_interpolant_bound_oracle(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                    double u_max = 8.0, double du = 0.005);

/// Strictly feasible random QP: Q = G^T G + 0.3 I, rows with guaranteed
/// interior point.
QpProblem random_feasible_qp(SplitMix64& gen, int num_vars, int num_constraints);

/// Noisy observations of a random convex function on [0, 1].
Dataset random_convex_dataset(SplitMix64& gen, int n, double noise);

}  // namespace convreg::testing
