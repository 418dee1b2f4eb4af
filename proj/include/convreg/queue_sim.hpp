#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "convreg/estimators.hpp"

namespace convreg {

/// Single-server FIFO queue, exponential interarrival and service times.
struct QueueConfig {
  double arrival_rate = 1.0;
  double service_rate = 1.25;  // must exceed the arrival rate
  long num_customers = 5000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Steady-state mean waiting time (time in queue, service excluded) of the
/// M/M/1 queue with unit arrival rate: 1/(x(x-1)) for service rate x > 1.
double true_f0(double x);

/// d/dx of true_f0: -(2x-1)/(x(x-1))^2.
double true_f0_gradient(double x);

/// Average waiting time of the first num_customers customers, queue started
/// empty and idle: W_1 = 0, W_{k+1} = max(0, W_k + S_k - A_k). All draws come
/// from a splitmix64 stream seeded with config.seed (service time first, then
/// interarrival, per customer), so results are deterministic per seed and two
/// service rates share common random numbers under the same seed.
double simulate_mean_wait(const QueueConfig& config);

/// Midpoint grid a + (b-a)(i-1)/n + (b-a)/(2n), i = 1..n.
std::vector<double> design_points(int n, double a = 1.2, double b = 1.3);

/// Benchmark dataset: X = design grid, y_i = simulated mean wait at X_i with
/// the per-point sub-seed derive_seed(seed, i).
Dataset mm1_dataset(int n, long customers, std::uint64_t seed, double a = 1.2, double b = 1.3);

/// Sidecar metadata: {seed, customers, generator, n, domain}.
nlohmann::json mm1_metadata(int n, long customers, std::uint64_t seed, const Domain& domain);

}  // namespace convreg
