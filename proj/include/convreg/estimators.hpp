#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "convreg/max_affine.hpp"
#include "convreg/qp_solver.hpp"

namespace convreg {

/// Observations (X_i, y_i) with X_i in [domain.lo, domain.hi]^d.
struct Dataset {
  Eigen::MatrixXd points;    // n x d
  Eigen::VectorXd response;  // n
  Domain domain;

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  void validate() const;  // throws std::invalid_argument
};

/// CSV with header "x1,...,xd,y"; values printed with 17 significant digits
/// so a write/read round trip reproduces the doubles exactly. The domain is
/// not part of the CSV; reading infers the tight bounding box unless the
/// caller overrides it.
void write_dataset_csv(std::ostream& os, const Dataset& data);
Dataset read_dataset_csv(std::istream& is);

enum class EstimatorKind { A, B, C };
const char* to_string(EstimatorKind kind);

struct FitSpec {
  EstimatorKind kind = EstimatorKind::A;
  double hyperparameter = 0.0;  // lambda (A), u (B), s (C)
  SolverTolerances tolerances;
  double bisection_tol = 1e-4;  // relative bracket width, estimator C only
};

struct FitDiagnostics {
  QpStatus status = QpStatus::optimal;
  int iterations = 0;
  bool polished = false;
  double primal_residual = 0.0;        ///< vs the full constraint system
  double stationarity_residual = 0.0;  ///< KKT residual from the solver
  double max_slope_inf = 0.0;          ///< achieved max_i |slope_i|_inf
  int pieces_removed = 0;
  int bisection_steps = 0;  // estimator C only
  bool reduced_rows = false;
};

struct FitResult {
  MaxAffineModel model;
  Eigen::VectorXd fitted_values;  ///< f-hat at the training points, dataset order
  double sse = 0.0;               ///< (1/n) sum (y_i - fhat_i)^2
  double grad_bound = 0.0;        ///< M-hat (A), u (B), u* (C)
  EstimatorKind estimator = EstimatorKind::A;
  double hyperparameter = 0.0;
  FitDiagnostics diagnostics;
};

/// Estimator C cannot reach the requested error cap: s lies below the
/// unconstrained least-squares optimum.
class CInfeasibleError : public std::runtime_error {
 public:
  CInfeasibleError(double min_sse, double requested_s);
  double min_achievable_sse = 0.0;
  double requested_s = 0.0;
};

/// The QP kernel failed to reach optimality for a fit.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, QpStatus status, double primal, double stationarity,
           int iterations);
  QpStatus status;
  double primal_residual;
  double stationarity_residual;
  int iterations;
};

/// Full quadratic program of the penalized estimator: variables
/// (f_1..f_n, beta_1..beta_n, M), objective (1/n) sum (y_i - f_i)^2 + lambda M,
/// n(n-1) convexity rows, 2nd box rows, and M >= 0.
QpProblem build_problem_a(const Dataset& data, double lambda);

/// Same constraint structure with the bound fixed at u and no penalty term.
QpProblem build_problem_b(const Dataset& data, double u);

FitResult fit_a(const Dataset& data, double lambda, const SolverTolerances& tol = {});
FitResult fit_b(const Dataset& data, double u, const SolverTolerances& tol = {});

/// Minimum gradient bound subject to sse <= s, computed by bisection on the
/// bound of the estimator-B program (its sse is nonincreasing in u). Returns
/// the fit at the upper bracket end; grad_bound is that bracket end.
FitResult fit_c(const Dataset& data, double s, const SolverTolerances& tol = {},
                double bisection_tol = 1e-4);

FitResult fit(const Dataset& data, const FitSpec& spec);

/// Mean squared residual of the model at the data points.
double sse(const Dataset& data, const MaxAffineModel& model);

/// Max violation of the full constraint system (all n^2 convexity rows, box
/// rows, bound nonnegativity) by the given fit, computed structurally.
double full_system_violation(const Dataset& data, const Eigen::VectorXd& values,
                             const Eigen::MatrixXd& slopes, double bound);

nlohmann::json fit_result_to_json(const FitResult& fit);
std::string fit_result_to_json_string(const FitResult& fit);

}  // namespace convreg
