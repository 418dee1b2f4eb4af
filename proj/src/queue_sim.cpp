#include "convreg/queue_sim.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "convreg/rng.hpp"

namespace convreg {

void QueueConfig::validate() const {
  if (!(arrival_rate > 0.0)) throw std::invalid_argument("arrival rate must be positive");
  if (!(service_rate > arrival_rate))
    throw std::invalid_argument("service rate must exceed the arrival rate");
  if (num_customers < 1) throw std::invalid_argument("need at least one customer");
}

double true_f0(double x) {
  if (!(x > 1.0)) throw std::invalid_argument("true_f0 requires service rate > 1");
  return 1.0 / (x * (x - 1.0));
}

double true_f0_gradient(double x) {
  if (!(x > 1.0)) throw std::invalid_argument("true_f0_gradient requires service rate > 1");
  const double q = x * (x - 1.0);
  return -(2.0 * x - 1.0) / (q * q);
}

double simulate_mean_wait(const QueueConfig& config) {
  config.validate();
  SplitMix64 gen(config.seed);
  double wait = 0.0;  // W_1: empty and idle start
  double total = 0.0;
  for (long k = 1; k < config.num_customers; ++k) {
    total += wait;
    const double service = gen.next_exponential(config.service_rate);
    const double interarrival = gen.next_exponential(config.arrival_rate);
    wait = std::max(0.0, wait + service - interarrival);
  }
  total += wait;
  return total / static_cast<double>(config.num_customers);
}

std::vector<double> design_points(int n, double a, double b) {
  if (n < 1) throw std::invalid_argument("need at least one design point");
  if (!(b > a)) throw std::invalid_argument("invalid design interval");
  std::vector<double> xs(n);
  const double w = b - a;
  for (int i = 1; i <= n; ++i) xs[i - 1] = a + w * (i - 1) / n + w / (2.0 * n);
  return xs;
}

Dataset mm1_dataset(int n, long customers, std::uint64_t seed, double a, double b) {
  const std::vector<double> xs = design_points(n, a, b);
  Dataset data;
  data.domain = Domain{a, b, 1};
  data.points.resize(n, 1);
  data.response.resize(n);
  for (int i = 0; i < n; ++i) {
    data.points(i, 0) = xs[i];
    QueueConfig cfg;
    cfg.service_rate = xs[i];
    cfg.num_customers = customers;
    cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    data.response[i] = simulate_mean_wait(cfg);
  }
  data.validate();
  return data;
}

nlohmann::json mm1_metadata(int n, long customers, std::uint64_t seed, const Domain& domain) {
  return {{"seed", seed},
          {"customers", customers},
          {"generator", rng_generator_name()},
          {"n", n},
          {"domain", {{"a", domain.lo}, {"b", domain.hi}, {"d", domain.dim}}}};
}

}  // namespace convreg
