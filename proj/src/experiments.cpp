#include "convreg/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "convreg/hyperparams.hpp"
#include "convreg/parallel.hpp"
#include "convreg/queue_sim.hpp"
#include "convreg/rng.hpp"

namespace convreg {

const char* to_string(ExperimentConfig config) {
  switch (config) {
    case ExperimentConfig::A1: return "A1";
    case ExperimentConfig::A2: return "A2";
    case ExperimentConfig::B: return "B";
    case ExperimentConfig::C: return "C";
  }
  return "?";
}

double mae_value(const MaxAffineModel& model, const Eigen::MatrixXd& points,
                 const std::function<double(const Eigen::VectorXd&)>& f0) {
  if (points.rows() < 1) throw std::invalid_argument("mae needs at least one point");
  double worst = 0.0;
  for (int i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd x = points.row(i).transpose();
    worst = std::max(worst, std::abs(evaluate(model, x) - f0(x)));
  }
  return worst;
}

double mae_subgradient(const MaxAffineModel& model, const Eigen::MatrixXd& points,
                       const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_f0) {
  if (points.rows() < 1) throw std::invalid_argument("mae needs at least one point");
  double worst = 0.0;
  for (int i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd x = points.row(i).transpose();
    worst = std::max(worst,
                     (subgradient(model, x) - grad_f0(x)).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

std::pair<double, double> confidence_interval(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("confidence interval needs >= 2 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  const double sd = std::sqrt(acc / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n)};
}

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box stats need at least one value");
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double p) {
    const double pos = p * (static_cast<double>(values.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  BoxStats s;
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_cut = s.q1 - 1.5 * iqr;
  const double hi_cut = s.q3 + 1.5 * iqr;
  s.whisker_low = s.q3;
  s.whisker_high = s.q1;
  bool any_in = false;
  for (double v : values) {
    if (v < lo_cut || v > hi_cut) {
      s.outliers.push_back(v);
    } else {
      if (!any_in) {
        s.whisker_low = v;
        s.whisker_high = v;
        any_in = true;
      } else {
        s.whisker_low = std::min(s.whisker_low, v);
        s.whisker_high = std::max(s.whisker_high, v);
      }
    }
  }
  if (!any_in) {  // degenerate: everything flagged; fall back to the box edges
    s.whisker_low = s.q1;
    s.whisker_high = s.q3;
  }
  return s;
}

int default_partition_cells(int n) {
  switch (n) {
    case 120: return 8;
    case 300: return 10;
    case 400: return 16;
    default: break;
  }
  const int r = static_cast<int>(std::ceil(n / 25.0));
  return std::clamp(r, 2, std::max(2, n / 2));
}

namespace {

struct FitCheck {
  int violations = 0;
  double eq6_gap = 0.0;
};

/// Property checks applied to every fit the harness produces: interpolation
/// consistency, slope bound, midpoint convexity, subgradient inequality, and
/// (penalized fits) the seminorm identity against the reported bound.
FitCheck check_fit(const Dataset& data, const FitResult& fit, std::uint64_t seed) {
  FitCheck out;
  const int n = data.size();
  for (int i = 0; i < n; ++i) {
    const double ev = evaluate(fit.model, data.points.row(i).transpose());
    if (std::abs(ev - fit.fitted_values[i]) > 1e-8) ++out.violations;
  }
  for (const AffinePiece& p : fit.model.pieces) {
    if (p.slope.lpNorm<Eigen::Infinity>() > fit.grad_bound + 1e-8) ++out.violations;
  }
  SplitMix64 gen(derive_seed(seed, 0x9c5));
  const int d = data.dim();
  const double lo = data.domain.lo, hi = data.domain.hi;
  Eigen::VectorXd x(d), y(d);
  for (int t = 0; t < 32; ++t) {
    for (int k = 0; k < d; ++k) {
      x[k] = lo + (hi - lo) * gen.next_uniform();
      y[k] = lo + (hi - lo) * gen.next_uniform();
    }
    const double fx = evaluate(fit.model, x);
    const double fy = evaluate(fit.model, y);
    const double fm = evaluate(fit.model, 0.5 * (x + y));
    const double scale = 1.0 + std::abs(fx) + std::abs(fy);
    if (fm > 0.5 * (fx + fy) + 1e-9 * scale) ++out.violations;
    if (fy < fx + subgradient(fit.model, x).dot(y - x) - 1e-9 * scale) ++out.violations;
  }
  if (fit.estimator == EstimatorKind::A) {
    out.eq6_gap = std::abs(j_inf(fit.model) - fit.grad_bound);
    if (out.eq6_gap > 1e-6) ++out.violations;
  }
  if (fit.estimator == EstimatorKind::C && fit.sse > fit.hyperparameter + 1e-6) ++out.violations;
  return out;
}

}  // namespace

ExperimentReport run_replications(const ExperimentPlan& plan) {
  if (plan.reps < 2) throw std::invalid_argument("need at least two replications");
  if (plan.n < 1) throw std::invalid_argument("need a positive sample size");
  const auto wants = [&](ExperimentConfig c) {
    return std::find(plan.configurations.begin(), plan.configurations.end(), c) !=
           plan.configurations.end();
  };
  const bool need_c = wants(ExperimentConfig::C) || wants(ExperimentConfig::B);

  ExperimentReport report;
  report.n = plan.n;
  report.reps = plan.reps;
  report.customers = plan.customers;
  report.base_seed = plan.base_seed;
  report.partition_cells =
      plan.partition_cells > 0 ? plan.partition_cells : default_partition_cells(plan.n);
  report.replications.resize(plan.reps);

  std::mutex agg_mutex;
  const auto run_one = [&](int r) {
    ReplicationRecord rec;
    rec.index = r;
    double max_primal = 0.0, max_stat = 0.0, max_eq6 = 0.0;
    int violations = 0;
    bool lambda_zero = false;
    try {
      const std::uint64_t ds_seed = derive_seed(plan.base_seed, 2 * static_cast<std::uint64_t>(r));
      const std::uint64_t cv_seed =
          derive_seed(plan.base_seed, 2 * static_cast<std::uint64_t>(r) + 1);
      const Dataset data = mm1_dataset(plan.n, plan.customers, ds_seed);
      rec.s_n = estimate_s_partition(data, PartitionSpec{report.partition_cells, {}});

      const auto f0 = [](const Eigen::VectorXd& x) { return true_f0(x[0]); };
      const auto grad_f0 = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, true_f0_gradient(x[0])).eval();
      };
      const auto record_fit = [&](ExperimentConfig cfg, const FitResult& fit) {
        MaePair mae;
        mae.value = mae_value(fit.model, data.points, f0);
        mae.subgrad = mae_subgradient(fit.model, data.points, grad_f0);
        if (!std::isfinite(mae.value) || !std::isfinite(mae.subgrad))
          throw std::runtime_error("non-finite mae");
        rec.maes[cfg] = mae;
        max_primal = std::max(max_primal, fit.diagnostics.primal_residual);
        max_stat = std::max(max_stat, fit.diagnostics.stationarity_residual);
        if (plan.validate_fits) {
          const FitCheck chk = check_fit(data, fit, ds_seed);
          violations += chk.violations;
          max_eq6 = std::max(max_eq6, chk.eq6_gap);
        }
      };

      if (need_c) {
        const FitResult fit_cap = fit_c(data, rec.s_n, plan.tolerances, plan.bisection_tol);
        rec.u_n = j_inf(fit_cap.model);
        if (wants(ExperimentConfig::C)) record_fit(ExperimentConfig::C, fit_cap);
        if (wants(ExperimentConfig::B))
          record_fit(ExperimentConfig::B, fit_b(data, rec.u_n, plan.tolerances));
      }
      if (wants(ExperimentConfig::A1)) {
        rec.lambda_a1 = lambda_schedule(plan.n);
        record_fit(ExperimentConfig::A1, fit_a(data, rec.lambda_a1, plan.tolerances));
      }
      if (wants(ExperimentConfig::A2)) {
        const CvResult cv = cross_validate_lambda(data, default_lambda_candidates(), 5, cv_seed,
                                                  plan.tolerances);
        rec.lambda_a2 = cv.best_lambda;
        lambda_zero = cv.best_lambda == 0.0;
        record_fit(ExperimentConfig::A2, fit_a(data, rec.lambda_a2, plan.tolerances));
      }
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.failure_reason = e.what();
      rec.maes.clear();
    }
    std::lock_guard<std::mutex> lock(agg_mutex);
    report.replications[r] = std::move(rec);
    report.max_primal_residual = std::max(report.max_primal_residual, max_primal);
    report.max_stationarity_residual = std::max(report.max_stationarity_residual, max_stat);
    report.max_eq6_gap = std::max(report.max_eq6_gap, max_eq6);
    report.property_violations += violations;
    if (lambda_zero) ++report.lambda_zero_count;
  };

  parallel_for(plan.jobs, plan.reps, run_one);

  for (const ReplicationRecord& rec : report.replications)
    if (rec.failed) ++report.failed_count;

  for (ExperimentConfig cfg : plan.configurations) {
    ConfigSummary summary;
    for (const ReplicationRecord& rec : report.replications) {
      if (rec.failed) continue;
      const auto it = rec.maes.find(cfg);
      if (it == rec.maes.end()) continue;
      summary.value_maes.push_back(it->second.value);
      summary.subgrad_maes.push_back(it->second.subgrad);
    }
    if (summary.value_maes.size() >= 2) {
      std::tie(summary.value_mean, summary.value_ci_halfwidth) =
          confidence_interval(summary.value_maes);
      std::tie(summary.subgrad_mean, summary.subgrad_ci_halfwidth) =
          confidence_interval(summary.subgrad_maes);
      summary.value_box = box_stats(summary.value_maes);
      summary.subgrad_box = box_stats(summary.subgrad_maes);
    }
    report.summaries[cfg] = std::move(summary);
  }
  return report;
}

namespace {

nlohmann::json box_to_json(const BoxStats& b) {
  return {{"q1", b.q1},
          {"median", b.median},
          {"q3", b.q3},
          {"whisker_low", b.whisker_low},
          {"whisker_high", b.whisker_high},
          {"outliers", b.outliers}};
}

}  // namespace

nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json reps = nlohmann::json::array();
  for (const ReplicationRecord& rec : report.replications) {
    nlohmann::json maes = nlohmann::json::object();
    for (const auto& [cfg, mae] : rec.maes)
      maes[to_string(cfg)] = {{"value", mae.value}, {"subgrad", mae.subgrad}};
    reps.push_back({{"index", rec.index},
                    {"failed", rec.failed},
                    {"failure_reason", rec.failure_reason},
                    {"s_n", rec.s_n},
                    {"u_n", rec.u_n},
                    {"lambda_a1", rec.lambda_a1},
                    {"lambda_a2", rec.lambda_a2},
                    {"maes", maes}});
  }
  nlohmann::json summaries = nlohmann::json::object();
  for (const auto& [cfg, s] : report.summaries) {
    summaries[to_string(cfg)] = {{"value_maes", s.value_maes},
                                 {"subgrad_maes", s.subgrad_maes},
                                 {"value_mean", s.value_mean},
                                 {"value_ci_halfwidth", s.value_ci_halfwidth},
                                 {"subgrad_mean", s.subgrad_mean},
                                 {"subgrad_ci_halfwidth", s.subgrad_ci_halfwidth},
                                 {"value_box", box_to_json(s.value_box)},
                                 {"subgrad_box", box_to_json(s.subgrad_box)}};
  }
  return {{"n", report.n},
          {"reps", report.reps},
          {"customers", report.customers},
          {"base_seed", report.base_seed},
          {"partition_cells", report.partition_cells},
          {"failed_count", report.failed_count},
          {"lambda_zero_count", report.lambda_zero_count},
          {"max_primal_residual", report.max_primal_residual},
          {"max_stationarity_residual", report.max_stationarity_residual},
          {"max_eq6_gap", report.max_eq6_gap},
          {"property_violations", report.property_violations},
          {"replications", reps},
          {"summaries", summaries}};
}

void write_mae_table_csv(std::ostream& os, const std::vector<ExperimentReport>& reports,
                         bool subgradient) {
  os << "n";
  const ExperimentConfig order[] = {ExperimentConfig::A1, ExperimentConfig::A2,
                                    ExperimentConfig::B, ExperimentConfig::C};
  for (ExperimentConfig cfg : order) os << ',' << to_string(cfg);
  os << '\n';
  char cell[64];
  for (const ExperimentReport& rep : reports) {
    os << rep.n;
    for (ExperimentConfig cfg : order) {
      os << ',';
      const auto it = rep.summaries.find(cfg);
      if (it == rep.summaries.end() || it->second.value_maes.size() < 2) continue;
      const double mean = subgradient ? it->second.subgrad_mean : it->second.value_mean;
      const double hw =
          subgradient ? it->second.subgrad_ci_halfwidth : it->second.value_ci_halfwidth;
      std::snprintf(cell, sizeof(cell), "%.4g±%.4g", mean, hw);
      os << cell;
    }
    os << '\n';
  }
}

void write_raw_maes_csv(std::ostream& os, const std::vector<ExperimentReport>& reports) {
  os << "n,replication,config,value_mae,subgrad_mae\n";
  char buf[64];
  for (const ExperimentReport& rep : reports) {
    for (const ReplicationRecord& rec : rep.replications) {
      if (rec.failed) continue;
      for (const auto& [cfg, mae] : rec.maes) {
        os << rep.n << ',' << rec.index << ',' << to_string(cfg) << ',';
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g", mae.value, mae.subgrad);
        os << buf << '\n';
      }
    }
  }
}

}  // namespace convreg
