#include "convreg/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "convreg/estimators.hpp"
#include "convreg/experiments.hpp"
#include "convreg/hyperparams.hpp"
#include "convreg/queue_sim.hpp"
#include "convreg/rng.hpp"

namespace convreg {

namespace {

bool log_enabled() {
  const char* lvl = std::getenv("CONVREG_LOG");
  return lvl != nullptr && std::string(lvl) != "off" && std::string(lvl) != "error";
}

void log_info(const std::string& msg) {
  if (log_enabled()) std::cerr << "[convreg] " << msg << '\n';
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string meta_path_for(const std::string& csv_path) {
  if (csv_path.size() > 4 && csv_path.substr(csv_path.size() - 4) == ".csv")
    return csv_path.substr(0, csv_path.size() - 4) + ".meta.json";
  return csv_path + ".meta.json";
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open output file: " + path);
  os << content;
  if (!os) throw std::runtime_error("failed writing output file: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  Dataset data = read_dataset_csv(is);
  // a sidecar written by `simulate` pins the domain
  std::ifstream meta(meta_path_for(path));
  if (meta) {
    const nlohmann::json j = nlohmann::json::parse(meta, nullptr, false);
    if (!j.is_discarded() && j.contains("domain")) {
      data.domain.lo = j["domain"]["a"].get<double>();
      data.domain.hi = j["domain"]["b"].get<double>();
      data.domain.dim = j["domain"]["d"].get<int>();
      data.validate();
    }
  }
  return data;
}

MaxAffineModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model: " + path);
  const nlohmann::json j = nlohmann::json::parse(is);
  return model_from_json(j.contains("model") ? j["model"] : j);
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (field.empty()) continue;
    out.push_back(std::stod(field));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (double v : parse_double_list(text)) out.push_back(static_cast<int>(v));
  return out;
}

struct FitFlags {
  std::string data_path;
  std::string problem;
  std::string out_path;
  std::optional<double> lambda, u, s;
  bool auto_select = false;
  std::string s_method = "partition";
  int cells = 0;
  double sigma2 = 0.0;
  double c_const = 1.0;
  std::string cv_candidates;
  int folds = 5;
  std::uint64_t seed = 12345;
  double tol = 1e-6;
  double bisect_tol = 1e-4;
};

double estimate_s_for(const Dataset& data, const FitFlags& ff) {
  if (ff.s_method == "partition") {
    const int r = ff.cells > 0 ? ff.cells : default_partition_cells(data.size());
    return estimate_s_partition(data, PartitionSpec{r, {}});
  }
  if (ff.s_method == "replication") {
    // group replicated observations at identical design points
    std::vector<ReplicationGroup> groups;
    std::vector<char> used(data.size(), 0);
    for (int i = 0; i < data.size(); ++i) {
      if (used[i]) continue;
      ReplicationGroup g;
      g.x = data.points.row(i).transpose();
      for (int j = i; j < data.size(); ++j) {
        if (!used[j] && data.points.row(j) == data.points.row(i)) {
          used[j] = 1;
          g.ys.push_back(data.response[j]);
        }
      }
      groups.push_back(std::move(g));
    }
    return estimate_s_replication(groups, [](const Eigen::VectorXd&) { return 1.0; });
  }
  if (ff.s_method == "theoretical") return theoretical_s(ff.sigma2, ff.c_const, data.size());
  if (ff.s_method == "fixed") {
    if (!ff.s) throw std::runtime_error("--s-method fixed requires --s");
    return *ff.s;
  }
  throw std::runtime_error("unknown --s-method: " + ff.s_method);
}

int cmd_simulate(int n, long customers, std::uint64_t seed, const std::string& out) {
  const Dataset data = mm1_dataset(n, customers, seed);
  std::ostringstream csv;
  write_dataset_csv(csv, data);
  write_file(out, csv.str());
  write_file(meta_path_for(out), mm1_metadata(n, customers, seed, data.domain).dump(2) + "\n");
  log_info("wrote " + out + " and " + meta_path_for(out));
  return 0;
}

int cmd_fit(const FitFlags& ff) {
  const Dataset data = load_dataset(ff.data_path);
  SolverTolerances tol;
  tol.feas_tol = ff.tol;
  tol.kkt_tol = ff.tol;

  FitResult result;
  if (ff.problem == "a") {
    double lambda;
    if (ff.auto_select) {
      const std::vector<double> cands = ff.cv_candidates.empty()
                                            ? default_lambda_candidates()
                                            : parse_double_list(ff.cv_candidates);
      const CvResult cv = cross_validate_lambda(data, cands, ff.folds, ff.seed, tol);
      lambda = cv.best_lambda;
      log_info("cross-validation selected lambda=" + g17(lambda));
    } else {
      lambda = *ff.lambda;
    }
    result = fit_a(data, lambda, tol);
  } else if (ff.problem == "b") {
    double u;
    if (ff.auto_select) {
      const double s = estimate_s_for(data, ff);
      u = select_u_from_c(data, s, tol, ff.bisect_tol);
      log_info("derived u=" + g17(u) + " from s=" + g17(s));
    } else {
      u = *ff.u;
    }
    result = fit_b(data, u, tol);
  } else {
    double s = ff.auto_select ? estimate_s_for(data, ff) : *ff.s;
    if (ff.auto_select) log_info("estimated s=" + g17(s));
    result = fit_c(data, s, tol, ff.bisect_tol);
  }

  write_file(ff.out_path, fit_result_to_json_string(result) + "\n");
  std::cout << "estimator=" << to_string(result.estimator) << '\n'
            << "hyperparameter=" << g17(result.hyperparameter) << '\n'
            << "sse=" << g17(result.sse) << '\n'
            << "grad_bound=" << g17(result.grad_bound) << '\n';
  return 0;
}

int cmd_eval(const std::string& model_path, int grid, const std::string& points_path,
             const std::string& truth, const std::string& out) {
  const MaxAffineModel model = load_model(model_path);
  Eigen::MatrixXd pts;
  if (grid > 0) {
    if (model.domain.dim != 1) throw std::runtime_error("--grid requires a 1-d model");
    pts.resize(grid, 1);
    for (int i = 0; i < grid; ++i) {
      pts(i, 0) = grid == 1 ? 0.5 * (model.domain.lo + model.domain.hi)
                            : model.domain.lo +
                                  (model.domain.hi - model.domain.lo) * i / (grid - 1);
    }
  } else {
    std::ifstream is(points_path);
    if (!is) throw std::runtime_error("cannot open points file: " + points_path);
    pts = read_dataset_csv(is).points;
  }
  const bool mm1 = truth == "mm1";
  if (mm1 && pts.cols() != 1) throw std::runtime_error("--truth mm1 requires 1-d points");

  std::ostringstream os;
  const int d = static_cast<int>(pts.cols());
  for (int k = 0; k < d; ++k) os << 'x' << (k + 1) << ',';
  os << "fhat";
  for (int k = 0; k < d; ++k) os << ",subgrad" << (k + 1);
  if (mm1) os << ",f0,df0";
  os << '\n';
  for (int i = 0; i < pts.rows(); ++i) {
    const Eigen::VectorXd x = pts.row(i).transpose();
    for (int k = 0; k < d; ++k) os << g17(x[k]) << ',';
    os << g17(evaluate(model, x));
    const Eigen::VectorXd g = subgradient(model, x);
    for (int k = 0; k < d; ++k) os << ',' << g17(g[k]);
    if (mm1) os << ',' << g17(true_f0(x[0])) << ',' << g17(true_f0_gradient(x[0]));
    os << '\n';
  }
  write_file(out, os.str());
  return 0;
}

int cmd_experiment(const std::vector<int>& n_list, int reps, long customers, std::uint64_t seed,
                   const std::string& configs_text, int cells, int jobs, double tol,
                   double bisect_tol, const std::string& prefix) {
  std::vector<ExperimentConfig> configs;
  for (const std::string& token : [&] {
         std::vector<std::string> t;
         std::stringstream ss(configs_text);
         std::string f;
         while (std::getline(ss, f, ',')) t.push_back(f);
         return t;
       }()) {
    if (token == "a1" || token == "A1") configs.push_back(ExperimentConfig::A1);
    else if (token == "a2" || token == "A2") configs.push_back(ExperimentConfig::A2);
    else if (token == "b" || token == "B") configs.push_back(ExperimentConfig::B);
    else if (token == "c" || token == "C") configs.push_back(ExperimentConfig::C);
    else throw std::runtime_error("unknown config: " + token);
  }

  std::vector<ExperimentReport> reports;
  nlohmann::json report_json = nlohmann::json::array();
  for (int n : n_list) {
    ExperimentPlan plan;
    plan.n = n;
    plan.reps = reps;
    plan.customers = customers;
    plan.base_seed = derive_seed(seed, static_cast<std::uint64_t>(n));
    plan.configurations = configs;
    plan.partition_cells = cells;
    plan.jobs = jobs;
    plan.tolerances.feas_tol = tol;
    plan.tolerances.kkt_tol = tol;
    plan.bisection_tol = bisect_tol;
    log_info("running n=" + std::to_string(n) + " reps=" + std::to_string(reps));
    reports.push_back(run_replications(plan));
    report_json.push_back(report_to_json(reports.back()));
    for (const auto& [cfg, s] : reports.back().summaries) {
      if (s.value_maes.size() < 2) continue;
      std::cout << "n=" << n << " config=" << to_string(cfg) << " value_mae=" << s.value_mean
                << "±" << s.value_ci_halfwidth << " subgrad_mae=" << s.subgrad_mean << "±"
                << s.subgrad_ci_halfwidth << " failed=" << reports.back().failed_count << '\n';
    }
  }

  write_file(prefix + "_report.json", report_json.dump(2) + "\n");
  std::ostringstream vt, st, raw;
  write_mae_table_csv(vt, reports, /*subgradient=*/false);
  write_mae_table_csv(st, reports, /*subgradient=*/true);
  write_raw_maes_csv(raw, reports);
  write_file(prefix + "_value_table.csv", vt.str());
  write_file(prefix + "_subgrad_table.csv", st.str());
  write_file(prefix + "_raw.csv", raw.str());
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"convex regression toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate an M/M/1 benchmark dataset");
  int sim_n = 0;
  long sim_customers = 5000;
  std::uint64_t sim_seed = 12345;
  std::string sim_out;
  sim->add_option("--n", sim_n, "number of design points")->required()->check(CLI::PositiveNumber);
  sim->add_option("--customers", sim_customers, "customers per simulation")
      ->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "base seed");
  sim->add_option("--out", sim_out, "output CSV path")->required();

  // fit
  auto* fitc = app.add_subcommand("fit", "fit one of the three estimators");
  FitFlags ff;
  fitc->add_option("--data", ff.data_path, "dataset CSV")->required();
  fitc->add_option("--problem", ff.problem, "estimator: a, b, or c")
      ->required()
      ->check(CLI::IsMember({"a", "b", "c"}));
  auto* lam = fitc->add_option("--lambda", ff.lambda, "smoothing constant (estimator a)");
  auto* uopt = fitc->add_option("--u", ff.u, "gradient bound (estimator b)");
  auto* sopt = fitc->add_option("--s", ff.s, "sse cap (estimator c)");
  auto* autoopt = fitc->add_flag("--auto", ff.auto_select, "select the hyperparameter from data");
  lam->excludes(uopt)->excludes(sopt)->excludes(autoopt);
  uopt->excludes(sopt)->excludes(autoopt);
  sopt->excludes(autoopt);
  fitc->add_option("--s-method", ff.s_method, "partition|replication|theoretical|fixed")
      ->check(CLI::IsMember({"partition", "replication", "theoretical", "fixed"}));
  fitc->add_option("--r", ff.cells, "partition cells per axis (0 = auto)");
  fitc->add_option("--sigma2", ff.sigma2, "noise variance for --s-method theoretical");
  fitc->add_option("--c", ff.c_const, "slack constant for --s-method theoretical");
  fitc->add_option("--cv-candidates", ff.cv_candidates, "comma list of smoothing candidates");
  fitc->add_option("--folds", ff.folds, "cross-validation folds")->check(CLI::PositiveNumber);
  fitc->add_option("--seed", ff.seed, "seed for fold shuffling");
  fitc->add_option("--tol", ff.tol, "solver feasibility/KKT tolerance");
  fitc->add_option("--bisect-tol", ff.bisect_tol, "bisection tolerance (estimator c)");
  fitc->add_option("--out", ff.out_path, "output fit JSON")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "tabulate a fitted model on a grid or point set");
  std::string ev_model, ev_points, ev_truth = "none", ev_out;
  int ev_grid = 0;
  ev->add_option("--model", ev_model, "fit or model JSON")->required();
  auto* gopt = ev->add_option("--grid", ev_grid, "evaluate on this many evenly spaced points");
  auto* popt = ev->add_option("--points", ev_points, "evaluate at points from this CSV");
  gopt->excludes(popt);
  ev->add_option("--truth", ev_truth, "append reference columns: mm1 or none")
      ->check(CLI::IsMember({"mm1", "none"}));
  ev->add_option("--out", ev_out, "output CSV path")->required();

  // experiment
  auto* ex = app.add_subcommand("experiment", "replicated benchmark with MAE tables");
  std::string ex_nlist = "120,300,400", ex_configs = "a1,a2,b,c", ex_out = "experiment";
  int ex_reps = 100, ex_cells = 0, ex_jobs = 0;
  long ex_customers = 5000;
  std::uint64_t ex_seed = 12345;
  double ex_tol = 1e-6, ex_btol = 1e-4;
  ex->add_option("--n-list", ex_nlist, "comma list of sample sizes");
  ex->add_option("--reps", ex_reps, "replications per sample size")->check(CLI::PositiveNumber);
  ex->add_option("--customers", ex_customers, "customers per simulation")
      ->check(CLI::PositiveNumber);
  ex->add_option("--seed", ex_seed, "base seed");
  ex->add_option("--configs", ex_configs, "comma list among a1,a2,b,c");
  ex->add_option("--r", ex_cells, "partition cells per axis (0 = auto)");
  ex->add_option("--jobs", ex_jobs, "parallel replications (0 = cores)");
  ex->add_option("--tol", ex_tol, "solver feasibility/KKT tolerance");
  ex->add_option("--bisect-tol", ex_btol, "bisection tolerance");
  ex->add_option("--out", ex_out, "output file prefix");

  std::vector<const char*> argv;
  argv.push_back("convreg");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_n, sim_customers, sim_seed, sim_out);
    if (fitc->parsed()) {
      const bool has_named = ff.lambda || ff.u || ff.s;
      if (ff.auto_select == has_named)
        throw std::runtime_error("pass exactly one of --lambda/--u/--s or --auto");
      if (!ff.auto_select) {
        if (ff.problem == "a" && !ff.lambda) throw std::runtime_error("estimator a needs --lambda");
        if (ff.problem == "b" && !ff.u) throw std::runtime_error("estimator b needs --u");
        if (ff.problem == "c" && !ff.s) throw std::runtime_error("estimator c needs --s");
      }
      return cmd_fit(ff);
    }
    if (ev->parsed()) {
      if ((ev_grid > 0) == !ev_points.empty())
        throw std::runtime_error("pass exactly one of --grid or --points");
      return cmd_eval(ev_model, ev_grid, ev_points, ev_truth, ev_out);
    }
    if (ex->parsed()) {
      return cmd_experiment(parse_int_list(ex_nlist), ex_reps, ex_customers, ex_seed, ex_configs,
                            ex_cells, ex_jobs, ex_tol, ex_btol, ex_out);
    }
  } catch (const CInfeasibleError& e) {
    std::cerr << "error: " << e.what() << '\n'
              << "min_achievable_sse=" << g17(e.min_achievable_sse) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace convreg
