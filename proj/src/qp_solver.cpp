#include "convreg/qp_solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace convreg {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::max_iterations: return "max_iterations";
  }
  return "unknown";
}

QpProblem::QpProblem(Eigen::MatrixXd quadratic, Eigen::VectorXd linear, double constant,
                     PsdCheck check)
    : quadratic_(std::move(quadratic)), linear_(std::move(linear)), constant_(constant) {
  if (quadratic_.rows() != quadratic_.cols() || quadratic_.rows() != linear_.size())
    throw std::invalid_argument("objective dimension mismatch");
  if (!quadratic_.allFinite() || !linear_.allFinite())
    throw std::invalid_argument("objective has non-finite entries");
  if (check == PsdCheck::verify) {
    const double scale = std::max(1.0, quadratic_.lpNorm<Eigen::Infinity>());
    if ((quadratic_ - quadratic_.transpose()).lpNorm<Eigen::Infinity>() > 1e-10 * scale)
      throw std::invalid_argument("quadratic term is not symmetric");
    quadratic_ = 0.5 * (quadratic_ + quadratic_.transpose()).eval();
    if (quadratic_.rows() > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(quadratic_,
                                                         Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() < -1e-8 * scale)
        throw std::invalid_argument("quadratic term is not positive semidefinite");
    }
  }
}

void QpProblem::reserve_constraints(std::size_t rows, std::size_t nonzeros) {
  offsets_.reserve(rows + 1);
  rhs_.reserve(rows);
  cols_.reserve(nonzeros);
  vals_.reserve(nonzeros);
}

void QpProblem::add_constraint(const Eigen::VectorXd& row, double rhs) {
  if (row.size() != linear_.size()) throw std::invalid_argument("constraint dimension mismatch");
  if (!row.allFinite() || !std::isfinite(rhs))
    throw std::invalid_argument("constraint has non-finite entries");
  for (int j = 0; j < row.size(); ++j) {
    if (row[j] != 0.0) {
      cols_.push_back(j);
      vals_.push_back(row[j]);
    }
  }
  offsets_.push_back(static_cast<int>(cols_.size()));
  rhs_.push_back(rhs);
}

void QpProblem::add_constraint(const std::vector<int>& index, const std::vector<double>& coeff,
                               double rhs) {
  if (index.size() != coeff.size()) throw std::invalid_argument("constraint index/coeff mismatch");
  for (std::size_t t = 0; t < index.size(); ++t) {
    if (index[t] < 0 || index[t] >= num_vars())
      throw std::invalid_argument("constraint index out of range");
    if (!std::isfinite(coeff[t])) throw std::invalid_argument("constraint has non-finite entries");
    cols_.push_back(index[t]);
    vals_.push_back(coeff[t]);
  }
  if (!std::isfinite(rhs)) throw std::invalid_argument("constraint rhs not finite");
  offsets_.push_back(static_cast<int>(cols_.size()));
  rhs_.push_back(rhs);
}

Eigen::VectorXd QpProblem::constraint_row(int k) const {
  Eigen::VectorXd row = Eigen::VectorXd::Zero(num_vars());
  for (int t = offsets_[k]; t < offsets_[k + 1]; ++t) row[cols_[t]] += vals_[t];
  return row;
}

double QpProblem::row_dot(int k, const Eigen::VectorXd& z) const {
  double acc = 0.0;
  for (int t = offsets_[k]; t < offsets_[k + 1]; ++t) acc += vals_[t] * z[cols_[t]];
  return acc;
}

double QpProblem::objective_value(const Eigen::VectorXd& z) const {
  return 0.5 * z.dot(quadratic_ * z) + linear_.dot(z) + constant_;
}

void QpProblem::multiply(const Eigen::VectorXd& z, Eigen::VectorXd& out) const {
  out.resize(num_constraints());
  for (int k = 0; k < num_constraints(); ++k) out[k] = row_dot(k, z);
}

void QpProblem::multiply_transpose(const Eigen::VectorXd& w, Eigen::VectorXd& out) const {
  out.setZero(num_vars());
  for (int k = 0; k < num_constraints(); ++k) {
    const double wk = w[k];
    if (wk == 0.0) continue;
    for (int t = offsets_[k]; t < offsets_[k + 1]; ++t) out[cols_[t]] += vals_[t] * wk;
  }
}

void QpProblem::dump(std::ostream& os) const {
  const auto put = [&os](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
  };
  os << "QP " << num_vars() << ' ' << num_constraints() << '\n';
  for (int i = 0; i < num_vars(); ++i) {
    for (int j = 0; j < num_vars(); ++j) {
      if (j) os << ' ';
      put(quadratic_(i, j));
    }
    os << '\n';
  }
  for (int j = 0; j < num_vars(); ++j) {
    if (j) os << ' ';
    put(linear_[j]);
  }
  os << '\n';
  for (int k = 0; k < num_constraints(); ++k) {
    const Eigen::VectorXd row = constraint_row(k);
    for (int j = 0; j < num_vars(); ++j) {
      put(row[j]);
      os << ' ';
    }
    put(rhs_[k]);
    os << '\n';
  }
}

double check_feasible(const QpProblem& problem, const Eigen::VectorXd& z) {
  if (z.size() != problem.num_vars()) throw std::invalid_argument("point dimension mismatch");
  double worst = 0.0;
  for (int k = 0; k < problem.num_constraints(); ++k)
    worst = std::max(worst, problem.row_dot(k, z) - problem.rhs(k));
  return std::max(worst, 0.0);
}

namespace {

struct Residuals {
  double primal = kInf;
  double dual = kInf;
  double merit() const { return std::max(primal, dual); }
};

Residuals compute_residuals(const QpProblem& p, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& y) {
  Residuals r;
  r.primal = p.num_constraints() ? check_feasible(p, x) : 0.0;
  Eigen::VectorXd grad = p.quadratic() * x + p.linear();
  if (p.num_constraints()) {
    Eigen::VectorXd aty;
    p.multiply_transpose(y, aty);
    grad += aty;
  }
  r.dual = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;
  return r;
}

/// Active-set refinement of an approximate solution. Solves the KKT system of
/// the working set through a delta-regularized Schur complement, then runs
/// iterative refinement against the unregularized KKT operator.
struct PolishResult {
  bool ok = false;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Residuals residuals;
};

PolishResult polish(const QpProblem& p, const Eigen::VectorXd& x_admm,
                    const Eigen::VectorXd& y_admm, double accept_primal, double accept_dual) {
  const int n = p.num_vars();
  const int m = p.num_constraints();

  std::vector<int> active;
  if (m) {
    const double ynorm = y_admm.lpNorm<Eigen::Infinity>();
    const double ycut = 1e-8 * std::max(1e-2, ynorm);
    Eigen::VectorXd ax;
    p.multiply(x_admm, ax);
    for (int k = 0; k < m; ++k) {
      const double slack = p.rhs(k) - ax[k];
      if (y_admm[k] > ycut || slack <= 1e-7 * (1.0 + std::abs(p.rhs(k)))) active.push_back(k);
    }
  }

  const double delta = 1e-7;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int na = static_cast<int>(active.size());
    Eigen::MatrixXd schur = p.quadratic();
    schur.diagonal().array() += delta;
    Eigen::VectorXd b_act(na);
    for (int a = 0; a < na; ++a) {
      const int k = active[a];
      b_act[a] = p.rhs(k);
      const auto& off = p.row_offsets();
      const auto& cols = p.col_indices();
      const auto& vals = p.coefficients();
      for (int t1 = off[k]; t1 < off[k + 1]; ++t1)
        for (int t2 = off[k]; t2 < off[k + 1]; ++t2)
          schur(cols[t1], cols[t2]) += vals[t1] * vals[t2] / delta;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(schur);
    if (ldlt.info() != Eigen::Success) return {};

    const auto kkt_solve = [&](const Eigen::VectorXd& rx, const Eigen::VectorXd& rnu,
                               Eigen::VectorXd& dx, Eigen::VectorXd& dnu) {
      Eigen::VectorXd rhs = rx;
      for (int a = 0; a < na; ++a) {
        const int k = active[a];
        const auto& off = p.row_offsets();
        for (int t = off[k]; t < off[k + 1]; ++t)
          rhs[p.col_indices()[t]] += p.coefficients()[t] * rnu[a] / delta;
      }
      dx = ldlt.solve(rhs);
      dnu.resize(na);
      for (int a = 0; a < na; ++a) {
        const int k = active[a];
        dnu[a] = (p.row_dot(k, dx) - rnu[a]) / delta;
      }
    };

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(na);
    for (int it = 0; it < 12; ++it) {
      // residual of the unregularized KKT system
      Eigen::VectorXd rx = -p.linear() - p.quadratic() * x;
      for (int a = 0; a < na; ++a) {
        const int k = active[a];
        const auto& off = p.row_offsets();
        for (int t = off[k]; t < off[k + 1]; ++t)
          rx[p.col_indices()[t]] -= p.coefficients()[t] * nu[a];
      }
      Eigen::VectorXd rnu(na);
      for (int a = 0; a < na; ++a) rnu[a] = b_act[a] - p.row_dot(active[a], x);
      const double rn = std::max(rx.size() ? rx.lpNorm<Eigen::Infinity>() : 0.0,
                                 na ? rnu.lpNorm<Eigen::Infinity>() : 0.0);
      if (rn < 1e-14 * (1.0 + p.linear().lpNorm<Eigen::Infinity>())) break;
      Eigen::VectorXd dx, dnu;
      kkt_solve(rx, rnu, dx, dnu);
      x += dx;
      nu += dnu;
    }

    // a noticeably negative multiplier means the working set is wrong
    const double nu_norm = na ? nu.lpNorm<Eigen::Infinity>() : 0.0;
    const double neg_cut = 1e-7 * std::max(1.0, nu_norm);
    bool bad = false;
    std::vector<int> pruned;
    for (int a = 0; a < na; ++a) {
      if (nu[a] < -neg_cut) {
        bad = true;
      } else {
        pruned.push_back(active[a]);
      }
    }
    if (bad && attempt == 0 && pruned.size() < active.size()) {
      active = std::move(pruned);
      continue;
    }
    if (bad) return {};

    PolishResult out;
    out.x = std::move(x);
    out.y = Eigen::VectorXd::Zero(m);
    for (int a = 0; a < na; ++a) out.y[active[a]] = std::max(0.0, nu[a]);
    out.residuals = compute_residuals(p, out.x, out.y);
    out.ok = out.residuals.primal <= accept_primal && out.residuals.dual <= accept_dual;
    return out;
  }
  return {};
}

/// Ruiz-style equilibration of the stacked [Q A^T; A 0] operator plus cost
/// normalization, mirroring the usual operator-splitting setup.
struct Scaling {
  Eigen::VectorXd d;  // variable scaling, x = d .* x_s
  Eigen::VectorXd e;  // row scaling
  double cost = 1.0;
};

enum class GiStatus { solved, infeasible, exceeded, numerical };

struct GiOutcome {
  GiStatus status = GiStatus::numerical;
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // multipliers for the <= rows
  int iterations = 0;
  std::vector<double> merits;  // negative objective, nonincreasing
};

/// Dual active-set method of Goldfarb and Idnani. Starts from the
/// unconstrained minimizer and adds the most violated constraint at a time,
/// keeping dual feasibility; terminates at the exact optimum of the
/// (ridge-regularized when Q is singular) program. J = L^{-T} spans the
/// Q-conjugate basis; R is the triangular factor of the active normals in
/// that basis.
GiOutcome run_goldfarb_idnani(const QpProblem& p, int max_iterations) {
  const int nv = p.num_vars();
  const int m = p.num_constraints();
  GiOutcome out;

  // Cholesky of Q, ridging the diagonal when Q is only semidefinite. The
  // ridge is reflected in the reported KKT residual (computed against the
  // original Q by the caller) and stays ~1e-10 * |x|.
  Eigen::LLT<Eigen::MatrixXd> llt;
  {
    const double scale = std::max(1.0, p.quadratic().diagonal().maxCoeff());
    bool ok = false;
    for (double eps : {0.0, 1e-10 * scale, 1e-8 * scale}) {
      Eigen::MatrixXd Qr = p.quadratic();
      Qr.diagonal().array() += eps;
      llt.compute(Qr);
      if (llt.info() == Eigen::Success) {
        ok = true;
        break;
      }
    }
    if (!ok) return out;
  }

  Eigen::VectorXd x = -llt.solve(p.linear());
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(nv, nv);
  llt.matrixU().solveInPlace(J);  // J = L^{-T}

  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(nv, nv);
  std::vector<int> active;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nv);
  int iq = 0;  // active set size

  Eigen::VectorXd d(nv), dn(nv), z(nv), r(nv);
  const auto& offs = p.row_offsets();
  const auto& cols = p.col_indices();
  const auto& vals = p.coefficients();
  std::vector<char> skip(m, 0);  // rows parked at tolerance-level degeneracy

  // objective tracked incrementally: a primal step t along z changes it by
  // t (z.np) (t/2 + u_plus)
  double fval = p.objective_value(x);
  const auto record_merit = [&]() { out.merits.push_back(-fval); };
  record_merit();

  const auto apply_givens_J = [&](int j, double cc, double ss) {
    // rotate columns j-1, j of J
    for (int i = 0; i < nv; ++i) {
      const double t1 = J(i, j - 1), t2 = J(i, j);
      J(i, j - 1) = cc * t1 + ss * t2;
      J(i, j) = -ss * t1 + cc * t2;
    }
  };

  int iter = 0;
  while (true) {
    if (++iter > max_iterations) {
      out.status = GiStatus::exceeded;
      out.x = x;
      return out;
    }

    // most violated row, lowest index on ties
    int pick = -1;
    double worst = 0.0;
    for (int k = 0; k < m; ++k) {
      if (skip[k]) continue;
      const double v = p.row_dot(k, x) - p.rhs(k);
      const double cut = 1e-11 * (1.0 + std::abs(p.rhs(k)));
      if (v > cut && v > worst) {
        worst = v;
        pick = k;
      }
    }
    if (pick < 0) {
      out.status = GiStatus::solved;
      out.x = x;
      out.y = Eigen::VectorXd::Zero(m);
      for (int a = 0; a < iq; ++a) out.y[active[a]] = u[a];
      out.iterations = iter;
      return out;
    }

    // normal of the picked row in >= orientation: np = -a_pick, kept sparse
    const int np_begin = offs[pick], np_end = offs[pick + 1];
    const auto np_dot = [&](const Eigen::VectorXd& v) {
      double acc = 0.0;
      for (int t = np_begin; t < np_end; ++t) acc -= vals[t] * v[cols[t]];
      return acc;
    };
    double u_plus = 0.0;

    while (true) {
      if (++iter > max_iterations) {
        out.status = GiStatus::exceeded;
        out.x = x;
        return out;
      }
      // d = J^T np (np sparse: a few rows of J), z = J_2 d_2, r = R^{-1} d_1.
      // dn accumulates |J|^T |np| so the step test can tell a genuine
      // conjugate component from rounding noise of the mixed-scale J.
      d.setZero();
      dn.setZero();
      for (int t = np_begin; t < np_end; ++t) {
        d.noalias() -= vals[t] * J.row(cols[t]).transpose();
        dn.noalias() += std::abs(vals[t]) * J.row(cols[t]).cwiseAbs().transpose();
      }
      z.setZero();
      if (iq < nv) z.noalias() = J.rightCols(nv - iq) * d.tail(nv - iq);
      if (iq > 0)
        r.head(iq) =
            R.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(d.head(iq));

      const double s_pick = np_dot(x) + p.rhs(pick);  // <= 0 while violated
      const double dtail2 = iq < nv ? d.tail(nv - iq).squaredNorm() : 0.0;
      const double noise = 1e-13 * dn.norm();

      // dual step length bounded by the first active multiplier to hit zero
      double t1 = kInf;
      int drop = -1;
      double rscale = 1.0;
      for (int a = 0; a < iq; ++a) rscale = std::max(rscale, std::abs(r[a]));
      for (int a = 0; a < iq; ++a) {
        if (r[a] > 1e-13 * rscale) {
          const double ratio = u[a] / r[a];
          if (ratio < t1) {
            t1 = ratio;
            drop = a;
          }
        }
      }
      // np^T z = |d_2|^2 exactly; dividing by it keeps the step stable
      double t2 = kInf;
      if (dtail2 > noise * noise) t2 = -s_pick / dtail2;

      if (t1 == kInf && t2 == kInf) {
        if (-s_pick > 1e-6 * (1.0 + std::abs(p.rhs(pick)))) {
          out.status = GiStatus::infeasible;
          out.x = x;
          out.iterations = iter;
          return out;
        }
        // degenerate at tolerance level: leave the row at its tiny violation
        skip[pick] = 1;
        break;
      }
      const double t = std::min(t1, t2);

      if (t2 == kInf) {
        // dual-only step: drop the blocking constraint and retry
        for (int a = 0; a < iq; ++a) u[a] -= t * r[a];
        u_plus += t;
      } else {
        x += t * z;
        fval += t * dtail2 * (0.5 * t + u_plus);
        for (int a = 0; a < iq; ++a) u[a] -= t * r[a];
        u_plus += t;
        if (t == t2) {
          // full step: admit the row into the active set
          for (int j = nv - 1; j > iq; --j) {
            const double a1 = d[j - 1], a2 = d[j];
            if (a2 == 0.0) continue;
            const double h = std::hypot(a1, a2);
            const double cc = a1 / h, ss = a2 / h;
            d[j - 1] = h;
            d[j] = 0.0;
            apply_givens_J(j, cc, ss);
          }
          R.col(iq).head(iq + 1) = d.head(iq + 1);
          active.push_back(pick);
          u[iq] = u_plus;
          ++iq;
          record_merit();
          break;  // next outer iteration
        }
      }

      // drop active constraint `drop`
      for (int a = drop; a + 1 < iq; ++a) {
        active[a] = active[a + 1];
        u[a] = u[a + 1];
        R.col(a) = R.col(a + 1);
      }
      active.pop_back();
      --iq;
      u[iq] = 0.0;
      R.col(iq).setZero();
      for (int j = drop; j < iq; ++j) {
        const double a1 = R(j, j), a2 = R(j + 1, j);
        if (a2 != 0.0) {
          const double h = std::hypot(a1, a2);
          const double cc = a1 / h, ss = a2 / h;
          for (int col = j; col < iq; ++col) {
            const double t1v = R(j, col), t2v = R(j + 1, col);
            R(j, col) = cc * t1v + ss * t2v;
            R(j + 1, col) = -ss * t1v + cc * t2v;
          }
          apply_givens_J(j + 1, cc, ss);
        }
      }
    }
  }
}

}  // namespace

QpSolution solve_qp(const QpProblem& problem, const SolverTolerances& tol) {
  const int n = problem.num_vars();
  const int m = problem.num_constraints();

  QpSolution sol;
  sol.z = Eigen::VectorXd::Zero(n);
  sol.multipliers = Eigen::VectorXd::Zero(m);

  if (n == 0) {
    sol.status = QpStatus::optimal;
    sol.objective = problem.constant();
    sol.primal_residual = m ? check_feasible(problem, sol.z) : 0.0;
    return sol;
  }

  const double accept_primal = 0.01 * tol.feas_tol;
  const double accept_dual = 0.01 * tol.kkt_tol;

  // Primary engine: dual active-set. Terminates at an exact working-set
  // solution; the operator-splitting loop below only runs when it gives up.
  {
    GiOutcome gi = run_goldfarb_idnani(problem, tol.max_iterations);
    if (gi.status == GiStatus::solved) {
      const Residuals res = compute_residuals(problem, gi.x, gi.y);
      if (res.primal <= tol.feas_tol && res.dual <= tol.kkt_tol) {
        sol.z = std::move(gi.x);
        sol.multipliers = std::move(gi.y);
        sol.status = QpStatus::optimal;
        sol.objective = problem.objective_value(sol.z);
        sol.primal_residual = res.primal;
        sol.stationarity_residual = res.dual;
        sol.iterations = gi.iterations;
        sol.polished = true;
        sol.merit_history = std::move(gi.merits);
        return sol;
      }
    } else if (gi.status == GiStatus::infeasible) {
      sol.z = std::move(gi.x);
      sol.status = QpStatus::infeasible;
      sol.objective = problem.objective_value(sol.z);
      const Residuals res = compute_residuals(problem, sol.z, sol.multipliers);
      sol.primal_residual = res.primal;
      sol.stationarity_residual = res.dual;
      sol.iterations = gi.iterations;
      return sol;
    }
  }

  // --- scaling ---
  Scaling sc;
  sc.d = Eigen::VectorXd::Ones(n);
  sc.e = Eigen::VectorXd::Ones(m);
  Eigen::MatrixXd Q = problem.quadratic();
  Eigen::VectorXd c = problem.linear();
  std::vector<double> avals = problem.coefficients();
  Eigen::VectorXd b(m);
  for (int k = 0; k < m; ++k) b[k] = problem.rhs(k);
  const auto& offs = problem.row_offsets();
  const auto& cidx = problem.col_indices();

  for (int pass = 0; pass < 10; ++pass) {
    Eigen::VectorXd coln = Q.cwiseAbs().colwise().maxCoeff();
    Eigen::VectorXd rown = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < m; ++k) {
      double rn = 0.0;
      for (int t = offs[k]; t < offs[k + 1]; ++t) {
        const double a = std::abs(avals[t]);
        rn = std::max(rn, a);
        coln[cidx[t]] = std::max(coln[cidx[t]], a);
      }
      rown[k] = rn;
    }
    double drift = 0.0;
    Eigen::VectorXd dc(n), dr(m);
    for (int j = 0; j < n; ++j) {
      const double nj = coln[j] == 0.0 ? 1.0 : coln[j];
      dc[j] = 1.0 / std::sqrt(std::max(nj, 1e-8));
      drift = std::max(drift, std::abs(nj - 1.0));
    }
    for (int k = 0; k < m; ++k) {
      const double nk = rown[k] == 0.0 ? 1.0 : rown[k];
      dr[k] = 1.0 / std::sqrt(std::max(nk, 1e-8));
      drift = std::max(drift, std::abs(nk - 1.0));
    }
    Q = dc.asDiagonal() * Q * dc.asDiagonal();
    c = dc.cwiseProduct(c);
    for (int k = 0; k < m; ++k) {
      for (int t = offs[k]; t < offs[k + 1]; ++t) avals[t] *= dr[k] * dc[cidx[t]];
      b[k] *= dr[k];
    }
    sc.d = sc.d.cwiseProduct(dc);
    sc.e = sc.e.cwiseProduct(dr);

    // cost normalization
    double qmean = 0.0;
    for (int j = 0; j < n; ++j) qmean += Q.col(j).cwiseAbs().maxCoeff();
    qmean /= n;
    const double g = 1.0 / std::max({1e-6, qmean, c.lpNorm<Eigen::Infinity>()});
    Q *= g;
    c *= g;
    sc.cost *= g;

    if (drift < 0.1) break;
  }

  const auto a_mul = [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    out.resize(m);
    for (int k = 0; k < m; ++k) {
      double acc = 0.0;
      for (int t = offs[k]; t < offs[k + 1]; ++t) acc += avals[t] * x[cidx[t]];
      out[k] = acc;
    }
  };
  const auto at_mul = [&](const Eigen::VectorXd& w, Eigen::VectorXd& out) {
    out.setZero(n);
    for (int k = 0; k < m; ++k) {
      if (w[k] == 0.0) continue;
      for (int t = offs[k]; t < offs[k + 1]; ++t) out[cidx[t]] += avals[t] * w[k];
    }
  };

  // --- ADMM setup ---
  const double sigma = 1e-6;
  const double alpha = 1.6;
  double rho = 0.1;
  Eigen::VectorXd rho_vec = Eigen::VectorXd::Constant(m, rho);

  Eigen::LDLT<Eigen::MatrixXd> kkt;
  const auto factorize = [&]() {
    Eigen::MatrixXd K = Q;
    K.diagonal().array() += sigma;
    for (int k = 0; k < m; ++k) {
      for (int t1 = offs[k]; t1 < offs[k + 1]; ++t1)
        for (int t2 = offs[k]; t2 < offs[k + 1]; ++t2)
          K(cidx[t1], cidx[t2]) += rho_vec[k] * avals[t1] * avals[t2];
    }
    kkt.compute(K);
  };
  factorize();
  if (kkt.info() != Eigen::Success) {
    sol.status = QpStatus::max_iterations;
    sol.objective = problem.objective_value(sol.z);
    const Residuals r0 = compute_residuals(problem, sol.z, sol.multipliers);
    sol.primal_residual = r0.primal;
    sol.stationarity_residual = r0.dual;
    return sol;
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd xt(n), zt(m), w(m), rhs(n), tmp_n(n), tmp_m(m);

  Eigen::VectorXd best_x = x;
  Eigen::VectorXd best_y = Eigen::VectorXd::Zero(m);
  Residuals best_res = compute_residuals(problem, best_x, best_y);
  bool best_polished = false;

  const int check_interval = 25;
  int refactor_budget = 10;
  int polish_budget = 12;
  int last_polish_iter = -1000;
  Eigen::VectorXd y_prev_check = y;

  int iter = 0;
  for (; iter < tol.max_iterations; ++iter) {
    // x-update through the Schur system
    at_mul(rho_vec.cwiseProduct(z) - y, rhs);
    rhs += sigma * x - c;
    xt = kkt.solve(rhs);
    a_mul(xt, zt);
    x = alpha * xt + (1.0 - alpha) * x;
    w = alpha * zt + (1.0 - alpha) * z + y.cwiseQuotient(rho_vec);
    z = w.cwiseMin(b);
    y = rho_vec.cwiseProduct(w - z);

    if ((iter + 1) % check_interval != 0) continue;

    // unscale and measure progress on the original problem
    Eigen::VectorXd xu = sc.d.cwiseProduct(x);
    Eigen::VectorXd yu = sc.e.cwiseProduct(y) / sc.cost;
    const Residuals res = compute_residuals(problem, xu, yu);
    if (res.merit() < best_res.merit()) {
      best_res = res;
      best_x = xu;
      best_y = yu;
      best_polished = false;
    }
    sol.merit_history.push_back(best_res.merit());

    const bool raw_converged = res.primal <= tol.feas_tol && res.dual <= tol.kkt_tol;
    const bool try_polish = polish_budget > 0 && (iter - last_polish_iter) >= 100 &&
                            (raw_converged || res.merit() <= 1e-3);
    if (try_polish) {
      --polish_budget;
      last_polish_iter = iter;
      PolishResult pol = polish(problem, xu, yu, accept_primal, accept_dual);
      if (pol.ok) {
        sol.z = pol.x;
        sol.multipliers = pol.y;
        sol.status = QpStatus::optimal;
        sol.objective = problem.objective_value(sol.z);
        sol.primal_residual = pol.residuals.primal;
        sol.stationarity_residual = pol.residuals.dual;
        sol.iterations = iter + 1;
        sol.polished = true;
        sol.merit_history.push_back(pol.residuals.merit());
        return sol;
      }
    }
    if (raw_converged) {
      sol.z = xu;
      sol.multipliers = yu;
      sol.status = QpStatus::optimal;
      sol.objective = problem.objective_value(xu);
      sol.primal_residual = res.primal;
      sol.stationarity_residual = res.dual;
      sol.iterations = iter + 1;
      return sol;
    }

    // primal infeasibility certificate: v >= 0, A^T v = 0, b^T v < 0
    if (m > 0) {
      Eigen::VectorXd dy = sc.e.cwiseProduct(y - y_prev_check) / sc.cost;
      const double dn = dy.lpNorm<Eigen::Infinity>();
      if (dn > 1e-12) {
        Eigen::VectorXd atdy;
        problem.multiply_transpose(dy, atdy);
        double bdy = 0.0;
        for (int k = 0; k < m; ++k) bdy += problem.rhs(k) * dy[k];
        const double eps_inf = 1e-8;
        if (atdy.lpNorm<Eigen::Infinity>() <= eps_inf * dn && bdy <= -eps_inf * dn &&
            dy.minCoeff() >= -eps_inf * dn) {
          sol.z = sc.d.cwiseProduct(x);
          sol.multipliers = dy.cwiseMax(0.0);
          sol.status = QpStatus::infeasible;
          sol.objective = problem.objective_value(sol.z);
          const Residuals r = compute_residuals(problem, sol.z, sol.multipliers);
          sol.primal_residual = r.primal;
          sol.stationarity_residual = r.dual;
          sol.iterations = iter + 1;
          return sol;
        }
      }
      y_prev_check = y;
    }

    // adaptive step size: rebalance primal vs dual progress occasionally
    if (refactor_budget > 0 && (iter + 1) % (check_interval * 40) == 0 && m > 0) {
      a_mul(x, tmp_m);
      const double pr_scale = std::max({1e-10, tmp_m.lpNorm<Eigen::Infinity>(),
                                        z.lpNorm<Eigen::Infinity>()});
      Eigen::VectorXd atyv;
      at_mul(y, atyv);
      tmp_n = Q * x;
      const double du_scale =
          std::max({1e-10, tmp_n.lpNorm<Eigen::Infinity>(), c.lpNorm<Eigen::Infinity>(),
                    atyv.lpNorm<Eigen::Infinity>()});
      const double pr = (tmp_m - z).lpNorm<Eigen::Infinity>() / pr_scale;
      tmp_n += c + atyv;
      const double du = tmp_n.lpNorm<Eigen::Infinity>() / du_scale;
      const double ratio = std::sqrt(std::max(pr, 1e-14) / std::max(du, 1e-14));
      if (ratio > 5.0 || ratio < 0.2) {
        rho = std::clamp(rho * ratio, 1e-6, 1e6);
        rho_vec.setConstant(rho);
        factorize();
        --refactor_budget;
      }
    }
  }

  // budget exhausted: best iterate seen, polished once more as a last try
  if (polish_budget > 0) {
    PolishResult pol = polish(problem, best_x, best_y, accept_primal, accept_dual);
    if (pol.ok) {
      best_x = pol.x;
      best_y = pol.y;
      best_res = pol.residuals;
      best_polished = true;
    }
  }
  sol.z = best_x;
  sol.multipliers = best_y;
  sol.status = (best_res.primal <= tol.feas_tol && best_res.dual <= tol.kkt_tol)
                   ? QpStatus::optimal
                   : QpStatus::max_iterations;
  sol.objective = problem.objective_value(best_x);
  sol.primal_residual = best_res.primal;
  sol.stationarity_residual = best_res.dual;
  sol.iterations = iter;
  sol.polished = best_polished;
  sol.merit_history.push_back(best_res.merit());
  return sol;
}

}  // namespace convreg
