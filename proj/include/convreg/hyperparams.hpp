#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "convreg/estimators.hpp"

namespace convreg {

/// Axis-aligned partition of the domain into cells_per_axis^d equal cells.
/// Weights are cell probabilities P(X in H_j) in cell-index order; empty
/// means uniform weighting (simple average over usable cells).
struct PartitionSpec {
  int cells_per_axis = 1;
  std::vector<double> weights;
};

/// Noise-variance estimate: weighted average of per-cell sample variances of
/// the responses. Cells with fewer than two observations are excluded and the
/// weights renormalized over the rest; throws when no cell qualifies.
double estimate_s_partition(const Dataset& data, const PartitionSpec& partition);

struct ReplicationGroup {
  Eigen::VectorXd x;
  std::vector<double> ys;  // at least two replications
};

/// Noise-variance estimate from replicated observations:
/// sum tau(x_i) W_i / sum tau(x_i) with W_i the within-group sample variance.
double estimate_s_replication(const std::vector<ReplicationGroup>& groups,
                              const std::function<double(const Eigen::VectorXd&)>& density);

/// sigma^2 + c n^{-1/2} sqrt(log n); the error cap that keeps the target
/// function feasible when the noise variance is known.
double theoretical_s(double sigma2, double c, int n);

/// Gradient seminorm of the estimator-C fit at cap s, used as the bound for
/// estimator B.
double select_u_from_c(const Dataset& data, double s, const SolverTolerances& tol = {},
                       double bisection_tol = 1e-4);

struct CvResult {
  double best_lambda = 0.0;
  int best_index = 0;
  std::vector<double> curve;  // CV(lambda) per candidate
};

/// K-fold cross-validation for the estimator-A smoothing constant. Folds are
/// contiguous blocks of a seeded shuffle (remainder spread one per fold);
/// ties break toward the lowest candidate index. Fully deterministic per
/// seed.
CvResult cross_validate_lambda(const Dataset& data, const std::vector<double>& candidates,
                               int folds, std::uint64_t seed, const SolverTolerances& tol = {});

/// Default smoothing schedule n^{-0.8}.
double lambda_schedule(int n);

/// Candidate grid used by the experiment harness.
const std::vector<double>& default_lambda_candidates();

}  // namespace convreg
