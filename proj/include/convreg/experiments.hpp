#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "convreg/estimators.hpp"

namespace convreg {

/// Estimator configurations benchmarked by the replication harness:
/// A1 = penalized fit at the n^{-0.8} schedule, A2 = penalized fit with
/// cross-validated smoothing, B = bound fixed from the C fit, C = the
/// error-capped minimum-bound fit.
enum class ExperimentConfig { A1, A2, B, C };
const char* to_string(ExperimentConfig config);

/// Max absolute error of fitted values over the given points.
double mae_value(const MaxAffineModel& model, const Eigen::MatrixXd& points,
                 const std::function<double(const Eigen::VectorXd&)>& f0);

/// Max sup-norm error of the fit subgradient against the target gradient.
double mae_subgradient(const MaxAffineModel& model, const Eigen::MatrixXd& points,
                       const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_f0);

/// (mean, 1.96 * sample sd / sqrt(count)); requires at least two values.
std::pair<double, double> confidence_interval(const std::vector<double>& values);

struct BoxStats {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;   // most extreme non-outliers
  double whisker_high = 0.0;
  std::vector<double> outliers;  // beyond 1.5 IQR
};

/// Quartiles by linear interpolation on the sorted sample.
BoxStats box_stats(std::vector<double> values);

struct MaePair {
  double value = 0.0;
  double subgrad = 0.0;
};

struct ReplicationRecord {
  int index = 0;
  bool failed = false;
  std::string failure_reason;
  double s_n = 0.0;
  double u_n = 0.0;
  double lambda_a1 = 0.0;
  double lambda_a2 = 0.0;
  std::map<ExperimentConfig, MaePair> maes;
};

struct ConfigSummary {
  std::vector<double> value_maes;  // successful replications, index order
  std::vector<double> subgrad_maes;
  double value_mean = 0.0, value_ci_halfwidth = 0.0;
  double subgrad_mean = 0.0, subgrad_ci_halfwidth = 0.0;
  BoxStats value_box;
  BoxStats subgrad_box;
};

struct ExperimentPlan {
  int n = 120;
  int reps = 100;
  long customers = 5000;
  std::uint64_t base_seed = 1;
  std::vector<ExperimentConfig> configurations = {ExperimentConfig::A1, ExperimentConfig::A2,
                                                  ExperimentConfig::B, ExperimentConfig::C};
  int partition_cells = 0;  ///< 0 = default_partition_cells(n)
  int jobs = 0;             ///< 0 = hardware concurrency
  SolverTolerances tolerances;
  double bisection_tol = 1e-4;
  bool validate_fits = true;  ///< run per-fit property checks, count violations
};

struct ExperimentReport {
  int n = 0;
  int reps = 0;
  long customers = 0;
  std::uint64_t base_seed = 0;
  int partition_cells = 0;
  std::vector<ReplicationRecord> replications;
  std::map<ExperimentConfig, ConfigSummary> summaries;
  int failed_count = 0;
  int lambda_zero_count = 0;  ///< cross-validation picked lambda = 0
  // worst-case diagnostics over every fit in the run
  double max_primal_residual = 0.0;
  double max_stationarity_residual = 0.0;
  double max_eq6_gap = 0.0;  ///< |j_inf - grad_bound| over penalized fits
  int property_violations = 0;
};

/// Partition resolution per sample size: 8, 10, 16 at n = 120, 300, 400;
/// otherwise ceil(n/25) clamped to [2, n/2].
int default_partition_cells(int n);

/// Full benchmark protocol per replication: simulate the queue dataset,
/// estimate the error cap from the partition variances, fit C, derive the
/// bound for B, fit B, fit A at the schedule and at the cross-validated
/// smoothing. Failed replications are recorded and excluded from statistics.
/// Deterministic for a fixed base_seed regardless of the job count.
ExperimentReport run_replications(const ExperimentPlan& plan);

nlohmann::json report_to_json(const ExperimentReport& report);

/// Table mirroring the benchmark layout: one row per n, one column per
/// configuration, cells "mean±halfwidth".
void write_mae_table_csv(std::ostream& os, const std::vector<ExperimentReport>& reports,
                         bool subgradient);

/// Long-format per-replication MAEs for external plotting.
void write_raw_maes_csv(std::ostream& os, const std::vector<ExperimentReport>& reports);

}  // namespace convreg
