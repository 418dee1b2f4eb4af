#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace convreg {

/// Hyperrectangle [lo, hi]^dim.
struct Domain {
  double lo = 0.0;
  double hi = 1.0;
  int dim = 1;

  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
};

/// One affine piece x -> value + slope^T (x - anchor).
struct AffinePiece {
  Eigen::VectorXd anchor;
  double value = 0.0;
  Eigen::VectorXd slope;

  double at(const Eigen::VectorXd& x) const { return value + slope.dot(x - anchor); }
};

/// Piecewise-linear convex function represented as a pointwise max of affine
/// pieces. Immutable after construction; concurrent reads are safe.
///
/// Invariants (see validate()):
///  - at least one piece, all anchors inside `domain`
///  - max_i |slope_i|_inf <= grad_bound + tol
///  - value_i >= value_j + slope_j^T (anchor_i - anchor_j) - tol for all i, j
struct MaxAffineModel {
  std::vector<AffinePiece> pieces;
  double grad_bound = 0.0;
  Domain domain;
};

/// Piece counts as active at x when its affine value is within
/// 1e-8 * (1 + |max|) of the pointwise max.
inline constexpr double kActivationTolerance = 1e-8;

/// max_i { value_i + slope_i^T (x - anchor_i) }. The formula is total: x
/// outside the domain evaluates by the same natural extension.
/// Throws std::invalid_argument on an empty piece list.
double evaluate(const MaxAffineModel& model, const Eigen::VectorXd& x);

/// Slope of the active piece with the lowest index (deterministic tie-break).
Eigen::VectorXd subgradient(const MaxAffineModel& model, const Eigen::VectorXd& x);

/// Slopes of all pieces active at x within the activation tolerance, first
/// occurrence order, exact duplicates removed. The subdifferential is the
/// convex hull of the returned vectors.
std::vector<Eigen::VectorXd> subdifferential_extremes(const MaxAffineModel& model,
                                                      const Eigen::VectorXd& x);

/// Sup-norm gradient seminorm, computed as max_i |slope_i|_inf. Estimator
/// post-processing guarantees no redundant piece inflates this beyond the
/// essential supremum of the represented function.
double j_inf(const MaxAffineModel& model);

/// Throws std::invalid_argument when a model invariant fails.
void validate(const MaxAffineModel& model, double tol = 1e-6);

nlohmann::json model_to_json(const MaxAffineModel& model);
MaxAffineModel model_from_json(const nlohmann::json& j);

std::string model_to_json_string(const MaxAffineModel& model);
MaxAffineModel model_from_json_string(const std::string& text);

}  // namespace convreg
