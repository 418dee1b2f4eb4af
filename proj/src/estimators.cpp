#include "convreg/estimators.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace convreg {

void Dataset::validate() const {
  if (points.rows() < 1) throw std::invalid_argument("dataset must contain at least one point");
  if (points.rows() != response.size())
    throw std::invalid_argument("points/response size mismatch");
  if (points.cols() != domain.dim) throw std::invalid_argument("dataset dimension mismatch");
  if (!points.allFinite() || !response.allFinite())
    throw std::invalid_argument("dataset has non-finite entries");
  for (int i = 0; i < size(); ++i) {
    if (!domain.contains(points.row(i).transpose(), 1e-12 * (1.0 + std::abs(domain.hi))))
      throw std::invalid_argument("design point outside domain");
  }
}

namespace {

void print_g17(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

double parse_double(const std::string& field) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc()) throw std::invalid_argument("bad numeric field: '" + field + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

void write_dataset_csv(std::ostream& os, const Dataset& data) {
  for (int k = 0; k < data.dim(); ++k) os << 'x' << (k + 1) << ',';
  os << "y\n";
  for (int i = 0; i < data.size(); ++i) {
    for (int k = 0; k < data.dim(); ++k) {
      print_g17(os, data.points(i, k));
      os << ',';
    }
    print_g17(os, data.response[i]);
    os << '\n';
  }
}

Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty dataset file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "y")
    throw std::invalid_argument("dataset header must be x1,...,xd,y");
  const int d = static_cast<int>(header.size()) - 1;

  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != d + 1)
      throw std::invalid_argument("dataset row has wrong field count");
    std::vector<double> row(d + 1);
    for (int k = 0; k <= d; ++k) row[k] = parse_double(fields[k]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("dataset has no observations");

  Dataset data;
  const int n = static_cast<int>(rows.size());
  data.points.resize(n, d);
  data.response.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) data.points(i, k) = rows[i][k];
    data.response[i] = rows[i][d];
  }
  data.domain.dim = d;
  data.domain.lo = data.points.minCoeff();
  data.domain.hi = data.points.maxCoeff();
  data.validate();
  return data;
}

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::A: return "A";
    case EstimatorKind::B: return "B";
    case EstimatorKind::C: return "C";
  }
  return "?";
}

CInfeasibleError::CInfeasibleError(double min_sse, double requested)
    : std::runtime_error("estimator C infeasible: requested sse cap " + std::to_string(requested) +
                         " lies below the least-squares optimum " + std::to_string(min_sse)),
      min_achievable_sse(min_sse),
      requested_s(requested) {}

FitError::FitError(const std::string& what, QpStatus st, double primal, double stationarity,
                   int iters)
    : std::runtime_error(what),
      status(st),
      primal_residual(primal),
      stationarity_residual(stationarity),
      iterations(iters) {}

namespace {

// Variable layout shared by all programs: f_i at i, beta_i component k at
// n + i*d + k, and (estimator A only) M at n + n*d.
struct Layout {
  int n = 0;
  int d = 0;
  bool has_bound_var = false;
  int f(int i) const { return i; }
  int beta(int i, int k) const { return n + i * d + k; }
  int bound() const { return n + n * d; }
  int num_vars() const { return n + n * d + (has_bound_var ? 1 : 0); }
};

QpProblem make_objective(const Dataset& data, const Layout& lay, double lambda) {
  const int n = lay.n;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(lay.num_vars(), lay.num_vars());
  Eigen::VectorXd c = Eigen::VectorXd::Zero(lay.num_vars());
  for (int i = 0; i < n; ++i) {
    Q(lay.f(i), lay.f(i)) = 2.0 / n;
    c[lay.f(i)] = -2.0 * data.response[i] / n;
  }
  if (lay.has_bound_var) c[lay.bound()] = lambda;
  const double constant = data.response.squaredNorm() / n;
  return QpProblem(std::move(Q), std::move(c), constant, QpProblem::PsdCheck::certified);
}

void add_convexity_row(QpProblem& qp, const Dataset& data, const Layout& lay, int i, int j) {
  // f_i >= f_j + beta_j^T (X_i - X_j)  =>  -f_i + f_j + beta_j^T (X_i - X_j) <= 0
  std::vector<int> idx;
  std::vector<double> coef;
  idx.reserve(2 + lay.d);
  coef.reserve(2 + lay.d);
  idx.push_back(lay.f(i));
  coef.push_back(-1.0);
  idx.push_back(lay.f(j));
  coef.push_back(1.0);
  for (int k = 0; k < lay.d; ++k) {
    const double delta = data.points(i, k) - data.points(j, k);
    if (delta != 0.0) {
      idx.push_back(lay.beta(j, k));
      coef.push_back(delta);
    }
  }
  qp.add_constraint(idx, coef, 0.0);
}

void add_box_rows(QpProblem& qp, const Layout& lay, double fixed_bound) {
  for (int i = 0; i < lay.n; ++i) {
    for (int k = 0; k < lay.d; ++k) {
      if (lay.has_bound_var) {
        qp.add_constraint({lay.beta(i, k), lay.bound()}, {1.0, -1.0}, 0.0);
        qp.add_constraint({lay.beta(i, k), lay.bound()}, {-1.0, -1.0}, 0.0);
      } else {
        qp.add_constraint({lay.beta(i, k)}, {1.0}, fixed_bound);
        qp.add_constraint({lay.beta(i, k)}, {-1.0}, fixed_bound);
      }
    }
  }
  if (lay.has_bound_var) qp.add_constraint({lay.bound()}, {-1.0}, 0.0);
}

/// Sorted-order permutation when the data admits the adjacent-row reduction
/// (d = 1, all abscissae distinct); empty otherwise.
std::vector<int> reduction_order(const Dataset& data) {
  if (data.dim() != 1 || data.size() < 3) return {};
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return data.points(a, 0) < data.points(b, 0); });
  for (std::size_t t = 1; t < order.size(); ++t) {
    if (data.points(order[t], 0) == data.points(order[t - 1], 0)) return {};
  }
  return order;
}

QpProblem build_program(const Dataset& data, EstimatorKind kind, double param,
                        bool allow_reduction, bool* used_reduction) {
  data.validate();
  if (param < 0.0) throw std::invalid_argument("hyperparameter must be nonnegative");
  Layout lay{data.size(), data.dim(), kind == EstimatorKind::A};
  QpProblem qp = make_objective(data, lay, kind == EstimatorKind::A ? param : 0.0);

  const std::vector<int> order = allow_reduction ? reduction_order(data) : std::vector<int>{};
  const int n = lay.n;
  if (!order.empty()) {
    // Adjacent pairs in sorted order imply the full n(n-1) row set for
    // d = 1 with distinct abscissae; the emitted rows are an exact subset
    // of the full system, so multipliers transfer unchanged.
    qp.reserve_constraints(2 * (n - 1) + 2 * n * lay.d + 1,
                           (2 + lay.d) * 2 * (n - 1) + 4 * n * lay.d + 1);
    for (int t = 0; t + 1 < n; ++t) {
      add_convexity_row(qp, data, lay, order[t + 1], order[t]);
      add_convexity_row(qp, data, lay, order[t], order[t + 1]);
    }
  } else {
    qp.reserve_constraints(static_cast<std::size_t>(n) * (n - 1) + 2 * n * lay.d + 1,
                           static_cast<std::size_t>(n) * (n - 1) * (2 + lay.d) + 4 * n * lay.d + 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) add_convexity_row(qp, data, lay, i, j);
  }
  add_box_rows(qp, lay, param);
  if (used_reduction) *used_reduction = !order.empty();
  return qp;
}

/// Drops pieces that are never uniquely needed on the anchor set, largest
/// slopes first, so the reported max slope matches the gradient seminorm of
/// the represented function. Once the largest remaining slope belongs to a
/// necessary piece the seminorm is pinned and the scan stops. Values at all
/// anchors are preserved to ~5e-9.
int remove_redundant_pieces(MaxAffineModel& model, const Eigen::MatrixXd& anchors,
                            const Eigen::VectorXd& values) {
  const int n = static_cast<int>(model.pieces.size());
  const int na = static_cast<int>(anchors.rows());
  if (n <= 1) return 0;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = model.pieces[a].slope.lpNorm<Eigen::Infinity>();
    const double sb = model.pieces[b].slope.lpNorm<Eigen::Infinity>();
    return sa != sb ? sa > sb : a < b;
  });

  // piece values at every anchor
  Eigen::MatrixXd table(n, na);
  for (int p = 0; p < n; ++p)
    for (int a = 0; a < na; ++a) table(p, a) = model.pieces[p].at(anchors.row(a).transpose());

  std::vector<bool> kept(n, true);
  int kept_count = n;

  // two largest piece values per anchor among kept pieces
  std::vector<int> top1(na), top2(na);
  const auto rescan_anchor = [&](int a) {
    int b1 = -1, b2 = -1;
    for (int p = 0; p < n; ++p) {
      if (!kept[p]) continue;
      if (b1 < 0 || table(p, a) > table(b1, a)) {
        b2 = b1;
        b1 = p;
      } else if (b2 < 0 || table(p, a) > table(b2, a)) {
        b2 = p;
      }
    }
    top1[a] = b1;
    top2[a] = b2;
  };
  for (int a = 0; a < na; ++a) rescan_anchor(a);

  for (int cand : order) {
    if (kept_count == 1) break;
    bool removable = true;
    for (int a = 0; a < na; ++a) {
      const int alt = top1[a] == cand ? top2[a] : top1[a];
      const double best = alt >= 0 ? table(alt, a) : -std::numeric_limits<double>::infinity();
      if (best < values[a] - 5e-9 * (1.0 + std::abs(values[a]))) {
        removable = false;
        break;
      }
    }
    if (!removable) break;  // the current max slope is essential
    kept[cand] = false;
    --kept_count;
    for (int a = 0; a < na; ++a)
      if (top1[a] == cand || top2[a] == cand) rescan_anchor(a);
  }

  if (kept_count == n) return 0;
  std::vector<AffinePiece> pruned;
  pruned.reserve(kept_count);
  for (int p = 0; p < n; ++p)
    if (kept[p]) pruned.push_back(std::move(model.pieces[p]));
  model.pieces = std::move(pruned);
  return n - kept_count;
}

FitResult fit_program(const Dataset& data, EstimatorKind kind, double param,
                      const SolverTolerances& tol) {
  bool reduced = false;
  const QpProblem qp = build_program(data, kind, param, /*allow_reduction=*/true, &reduced);
  const QpSolution sol = solve_qp(qp, tol);
  if (sol.status != QpStatus::optimal) {
    throw FitError(std::string("qp solve failed for estimator ") + to_string(kind) + ": " +
                       to_string(sol.status),
                   sol.status, sol.primal_residual, sol.stationarity_residual, sol.iterations);
  }

  const int n = data.size();
  const int d = data.dim();
  Layout lay{n, d, kind == EstimatorKind::A};

  Eigen::VectorXd values(n);
  Eigen::MatrixXd slopes(n, d);
  for (int i = 0; i < n; ++i) {
    values[i] = sol.z[lay.f(i)];
    for (int k = 0; k < d; ++k) slopes(i, k) = sol.z[lay.beta(i, k)];
  }
  double bound = kind == EstimatorKind::A ? std::max(0.0, sol.z[lay.bound()]) : param;
  // clamp slopes into the box so the slope-bound invariant holds exactly
  slopes = slopes.cwiseMax(-bound).cwiseMin(bound);

  FitResult fit;
  fit.estimator = kind;
  fit.hyperparameter = param;
  fit.fitted_values = values;
  fit.model.domain = data.domain;
  fit.model.grad_bound = bound;
  fit.model.pieces.reserve(n);
  for (int i = 0; i < n; ++i) {
    fit.model.pieces.push_back(
        {data.points.row(i).transpose(), values[i], slopes.row(i).transpose()});
  }
  fit.diagnostics.pieces_removed = remove_redundant_pieces(fit.model, data.points, values);
  if (kind == EstimatorKind::A && param == 0.0) {
    // Without the penalty term the bound variable is not pinned from below;
    // canonicalize to the smallest optimal value, the seminorm of the fit.
    bound = j_inf(fit.model);
    fit.model.grad_bound = bound;
  }
  fit.grad_bound = bound;
  fit.sse = (data.response - values).squaredNorm() / n;
  fit.diagnostics.status = sol.status;
  fit.diagnostics.iterations = sol.iterations;
  fit.diagnostics.polished = sol.polished;
  fit.diagnostics.stationarity_residual = sol.stationarity_residual;
  fit.diagnostics.primal_residual =
      std::max(sol.primal_residual, full_system_violation(data, values, slopes, bound));
  fit.diagnostics.max_slope_inf =
      slopes.rows() ? slopes.cwiseAbs().maxCoeff() : 0.0;
  fit.diagnostics.reduced_rows = reduced;
  return fit;
}

}  // namespace

double full_system_violation(const Dataset& data, const Eigen::VectorXd& values,
                             const Eigen::MatrixXd& slopes, double bound) {
  const int n = data.size();
  double worst = 0.0;
  for (int j = 0; j < n; ++j) {
    const Eigen::VectorXd xj = data.points.row(j).transpose();
    for (int i = 0; i < n; ++i) {
      if (i == j) continue;
      const double lhs = values[j] + slopes.row(j).dot(data.points.row(i) - data.points.row(j));
      worst = std::max(worst, lhs - values[i]);
    }
  }
  worst = std::max(worst, slopes.cwiseAbs().maxCoeff() - bound);
  worst = std::max(worst, -bound);
  return std::max(worst, 0.0);
}

QpProblem build_problem_a(const Dataset& data, double lambda) {
  return build_program(data, EstimatorKind::A, lambda, /*allow_reduction=*/false, nullptr);
}

QpProblem build_problem_b(const Dataset& data, double u) {
  return build_program(data, EstimatorKind::B, u, /*allow_reduction=*/false, nullptr);
}

FitResult fit_a(const Dataset& data, double lambda, const SolverTolerances& tol) {
  return fit_program(data, EstimatorKind::A, lambda, tol);
}

FitResult fit_b(const Dataset& data, double u, const SolverTolerances& tol) {
  return fit_program(data, EstimatorKind::B, u, tol);
}

FitResult fit_c(const Dataset& data, double s, const SolverTolerances& tol, double bisection_tol) {
  if (s < 0.0) throw std::invalid_argument("sse cap must be nonnegative");
  int steps = 0;

  FitResult at_zero = fit_b(data, 0.0, tol);
  ++steps;
  if (at_zero.sse <= s) {
    at_zero.estimator = EstimatorKind::C;
    at_zero.hyperparameter = s;
    at_zero.diagnostics.bisection_steps = steps;
    return at_zero;
  }

  double lo = 0.0;
  double hi = 1.0;
  bool have_hi = false;
  FitResult hi_fit;
  bool lse_checked = false;
  while (!have_hi) {
    FitResult f = fit_b(data, hi, tol);
    ++steps;
    if (f.sse <= s) {
      have_hi = true;
      hi_fit = std::move(f);
    } else {
      lo = hi;
      hi *= 2.0;
      if (!lse_checked && hi > 1e4) {
        // before doubling further, settle feasibility via the unconstrained
        // least-squares optimum
        lse_checked = true;
        const FitResult lse = fit_a(data, 0.0, tol);
        ++steps;
        if (lse.sse > s) throw CInfeasibleError(lse.sse, s);
      }
      if (hi > 1e8) {
        const FitResult lse = fit_a(data, 0.0, tol);
        throw CInfeasibleError(lse.sse, s);
      }
    }
  }

  while (hi - lo > bisection_tol * std::max(1.0, hi)) {
    const double mid = 0.5 * (lo + hi);
    FitResult f = fit_b(data, mid, tol);
    ++steps;
    if (f.sse <= s) {
      hi = mid;
      hi_fit = std::move(f);
    } else {
      lo = mid;
    }
  }

  hi_fit.estimator = EstimatorKind::C;
  hi_fit.hyperparameter = s;
  hi_fit.grad_bound = hi;
  hi_fit.model.grad_bound = hi;
  hi_fit.diagnostics.bisection_steps = steps;
  return hi_fit;
}

FitResult fit(const Dataset& data, const FitSpec& spec) {
  switch (spec.kind) {
    case EstimatorKind::A: return fit_a(data, spec.hyperparameter, spec.tolerances);
    case EstimatorKind::B: return fit_b(data, spec.hyperparameter, spec.tolerances);
    case EstimatorKind::C:
      return fit_c(data, spec.hyperparameter, spec.tolerances, spec.bisection_tol);
  }
  throw std::invalid_argument("unknown estimator kind");
}

double sse(const Dataset& data, const MaxAffineModel& model) {
  data.validate();
  double acc = 0.0;
  for (int i = 0; i < data.size(); ++i) {
    const double r = data.response[i] - evaluate(model, data.points.row(i).transpose());
    acc += r * r;
  }
  return acc / data.size();
}

nlohmann::json fit_result_to_json(const FitResult& fit) {
  return {{"model", model_to_json(fit.model)},
          {"sse", fit.sse},
          {"grad_bound", fit.grad_bound},
          {"estimator", to_string(fit.estimator)},
          {"hyperparameter", fit.hyperparameter}};
}

std::string fit_result_to_json_string(const FitResult& fit) {
  return fit_result_to_json(fit).dump(2);
}

}  // namespace convreg
