#include "convreg/hyperparams.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "convreg/rng.hpp"

namespace convreg {

namespace {

// unbiased sample variance, divide by count-1
double sample_variance(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return acc / (n - 1.0);
}

}  // namespace

double estimate_s_partition(const Dataset& data, const PartitionSpec& partition) {
  data.validate();
  const int r = partition.cells_per_axis;
  if (r < 1) throw std::invalid_argument("partition needs at least one cell per axis");
  const int d = data.dim();
  std::size_t num_cells = 1;
  for (int k = 0; k < d; ++k) num_cells *= static_cast<std::size_t>(r);
  if (!partition.weights.empty() && partition.weights.size() != num_cells)
    throw std::invalid_argument("weight count does not match cell count");

  const double lo = data.domain.lo;
  const double width = data.domain.hi - data.domain.lo;
  std::vector<std::vector<double>> cells(num_cells);
  for (int i = 0; i < data.size(); ++i) {
    std::size_t cell = 0;
    for (int k = 0; k < d; ++k) {
      int idx = width > 0.0
                    ? static_cast<int>(std::floor((data.points(i, k) - lo) / width * r))
                    : 0;
      idx = std::clamp(idx, 0, r - 1);
      cell = cell * r + static_cast<std::size_t>(idx);
    }
    cells[cell].push_back(data.response[i]);
  }

  double weighted = 0.0;
  double total_weight = 0.0;
  for (std::size_t j = 0; j < num_cells; ++j) {
    if (cells[j].size() < 2) continue;  // sample variance undefined, excluded
    const double w = partition.weights.empty() ? 1.0 : partition.weights[j];
    if (w < 0.0) throw std::invalid_argument("negative cell weight");
    weighted += w * sample_variance(cells[j]);
    total_weight += w;
  }
  if (total_weight <= 0.0)
    throw std::invalid_argument("no partition cell holds two or more observations");
  return weighted / total_weight;
}

double estimate_s_replication(const std::vector<ReplicationGroup>& groups,
                              const std::function<double(const Eigen::VectorXd&)>& density) {
  if (groups.empty()) throw std::invalid_argument("no replication groups");
  double num = 0.0;
  double den = 0.0;
  for (const ReplicationGroup& g : groups) {
    if (g.ys.size() < 2)
      throw std::invalid_argument("replication group needs at least two observations");
    const double tau = density(g.x);
    if (!(tau >= 0.0)) throw std::invalid_argument("density must be nonnegative");
    num += tau * sample_variance(g.ys);
    den += tau;
  }
  if (den <= 0.0) throw std::invalid_argument("density vanishes on all groups");
  return num / den;
}

double theoretical_s(double sigma2, double c, int n) {
  if (sigma2 < 0.0) throw std::invalid_argument("sigma^2 must be nonnegative");
  if (c < 0.0) throw std::invalid_argument("c must be nonnegative");
  if (n < 2) throw std::invalid_argument("n must be at least 2");
  return sigma2 + c * std::sqrt(std::log(static_cast<double>(n))) / std::sqrt(n);
}

double select_u_from_c(const Dataset& data, double s, const SolverTolerances& tol,
                       double bisection_tol) {
  return j_inf(fit_c(data, s, tol, bisection_tol).model);
}

CvResult cross_validate_lambda(const Dataset& data, const std::vector<double>& candidates,
                               int folds, std::uint64_t seed, const SolverTolerances& tol) {
  data.validate();
  if (candidates.empty()) throw std::invalid_argument("no smoothing candidates");
  for (double lam : candidates)
    if (lam < 0.0) throw std::invalid_argument("negative smoothing candidate");
  const int n = data.size();
  if (folds < 2) throw std::invalid_argument("need at least two folds");
  if (n < folds) throw std::invalid_argument("fewer observations than folds");

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  SplitMix64 gen(seed);
  shuffle(perm, gen);

  // contiguous blocks; the remainder goes one observation per leading fold
  std::vector<std::vector<int>> fold_members(folds);
  const int base = n / folds;
  const int rem = n % folds;
  int cursor = 0;
  for (int k = 0; k < folds; ++k) {
    const int len = base + (k < rem ? 1 : 0);
    if (len == 0) throw std::invalid_argument("empty cross-validation fold");
    for (int t = 0; t < len; ++t) fold_members[k].push_back(perm[cursor++]);
  }

  CvResult result;
  result.curve.assign(candidates.size(), 0.0);
  const int d = data.dim();

  std::vector<Dataset> train(folds);
  std::vector<std::vector<int>> heldout(folds);
  for (int k = 0; k < folds; ++k) {
    std::vector<char> in_fold(n, 0);
    for (int idx : fold_members[k]) in_fold[idx] = 1;
    Dataset& tr = train[k];
    tr.domain = data.domain;
    tr.points.resize(n - static_cast<int>(fold_members[k].size()), d);
    tr.response.resize(tr.points.rows());
    int w = 0;
    for (int i = 0; i < n; ++i) {
      if (in_fold[i]) {
        heldout[k].push_back(i);
      } else {
        tr.points.row(w) = data.points.row(i);
        tr.response[w] = data.response[i];
        ++w;
      }
    }
  }

  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    double acc = 0.0;
    for (int k = 0; k < folds; ++k) {
      const FitResult f = fit_a(train[k], candidates[ci], tol);
      for (int idx : heldout[k]) {
        const double pred = evaluate(f.model, data.points.row(idx).transpose());
        const double r = data.response[idx] - pred;
        acc += r * r;
      }
    }
    result.curve[ci] = acc / folds;
  }

  result.best_index = 0;
  for (std::size_t ci = 1; ci < candidates.size(); ++ci)
    if (result.curve[ci] < result.curve[result.best_index])
      result.best_index = static_cast<int>(ci);
  result.best_lambda = candidates[result.best_index];
  return result;
}

double lambda_schedule(int n) {
  if (n < 1) throw std::invalid_argument("n must be positive");
  return std::pow(static_cast<double>(n), -0.8);
}

const std::vector<double>& default_lambda_candidates() {
  static const std::vector<double> grid = {0.0, 1e-10, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e6};
  return grid;
}

}  // namespace convreg
