#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbsde/config.hpp"
#include "fbsde/riccati.hpp"
#include "fbsde/sde_core.hpp"

// Evaluation runs and their exported artifacts: per-trial trajectory CSV,
// per-timestep statistics CSV and a machine-readable JSON summary. Standard
// deviations are sample standard deviations (ddof = 1).

namespace fbsde {

struct TrajectoryStats {
  int n = 0;       // rollouts aggregated
  Mat mean_x;      // (N+1) x n_x
  Mat std_x;
  Mat mean_u;      // (N+1) x n_u; terminal row is zero (no control at t_N)
  Mat std_u;
  Vec mean_v;      // N+1
  Vec std_v;
  Vec terminal_cost;     // per trial
  Vec accumulated_cost;  // per trial: sum_k (q + u'Ru/2) dt + terminal
};

struct EvalRun {
  std::string policy;  // "second_order", "first_order_baseline" or "oracle"
  TimeGrid grid;
  int n_x = 0;
  int n_u = 0;
  std::uint64_t seed = 0;
  std::vector<int> trial_ids;  // parallel to rollouts; gaps mark failures
  std::vector<RolloutResult> rollouts;
  int failed = 0;
  std::string failure_note;
  TrajectoryStats stats;
  std::uint64_t noise_digest = 0;
};

std::uint64_t digest_noise(const std::vector<NoisePath>& noise);

TrajectoryStats compute_stats(const std::vector<RolloutResult>& rollouts, const CostSpec& cost,
                              const TimeGrid& grid);

// Rolls the trained network policy over n_trials CRN noise paths.
EvalRun evaluate_network(const DynamicsModel& model, const CostSpec& cost, const NetworkParams& params,
                         const TimeGrid& grid, int n_trials, std::uint64_t seed, ControlMode mode,
                         int threads = 1);

// Same noise consumption, analytic Riccati policy.
EvalRun evaluate_oracle(const DynamicsModel& model, const CostSpec& cost, const RiccatiSolution& sol,
                        int n_trials, std::uint64_t seed);

// Columns: trial, step, time, x_0..x_{n_x-1}, u_0..u_{n_u-1}, V, running_cost.
// running_cost is the integrand q(x) + u'Ru/2; controls are zero on the
// terminal row. One row per (trial, step), floats at 17 significant digits.
void write_trajectories_csv(const std::string& path, const EvalRun& run, const CostSpec& cost);

// Columns: step, time, then mean/std per state channel, mean/std per control channel.
void write_stats_csv(const std::string& path, const EvalRun& run);

void write_summary_json(const std::string& path, const EvalRun& run, const std::string& model_name,
                        const std::string& config_digest);

// Riccati solution export: step, time, P row-major, S, c.
void write_riccati_csv(const std::string& path, const RiccatiSolution& sol);

// Generic numeric CSV reader (header + double rows); used by compare and tests.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  int column(const std::string& name) const;  // -1 if absent
};
CsvTable read_csv(const std::string& path);

}  // namespace fbsde
