#include "fbsde/stats.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fbsde/errors.hpp"
#include "fbsde/hash.hpp"
#include "fbsde/parallel.hpp"

#include <json.hpp>

namespace fbsde {

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

EvalRun run_policy(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                   int n_trials, std::uint64_t seed, int threads, const std::string& policy,
                   const std::function<RolloutResult(const NoisePath&)>& simulate) {
  EvalRun run;
  run.policy = policy;
  run.grid = grid;
  run.n_x = model.n_x;
  run.n_u = model.n_u;
  run.seed = seed;

  const std::vector<NoisePath> noise = sample_noise(grid, model.n_w, n_trials, seed);
  run.noise_digest = digest_noise(noise);

  struct Slot {
    RolloutResult r;
    bool ok = false;
    std::string note;
    std::exception_ptr fatal;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(n_trials));
  parallel_for(n_trials, threads, [&](int i) {
    Slot& slot = slots[static_cast<std::size_t>(i)];
    try {
      slot.r = simulate(noise[static_cast<std::size_t>(i)]);
      slot.ok = true;
    } catch (const NumericalError& e) {
      slot.note = e.what();
    } catch (...) {
      slot.fatal = std::current_exception();
    }
  });
  for (const Slot& slot : slots) {
    if (slot.fatal) std::rethrow_exception(slot.fatal);
  }
  for (int i = 0; i < n_trials; ++i) {
    Slot& slot = slots[static_cast<std::size_t>(i)];
    if (slot.ok) {
      run.trial_ids.push_back(i);
      run.rollouts.push_back(std::move(slot.r));
    } else {
      ++run.failed;
      if (run.failure_note.empty()) {
        run.failure_note = "trial " + std::to_string(i) + ": " + slot.note;
      }
    }
  }
  if (run.rollouts.empty()) {
    throw NumericalError("evaluation: all " + std::to_string(n_trials) + " trials failed (" +
                         run.failure_note + ")");
  }
  run.stats = compute_stats(run.rollouts, cost, grid);
  return run;
}

}  // namespace

std::uint64_t digest_noise(const std::vector<NoisePath>& noise) {
  Fnv1a64 h;
  for (const NoisePath& p : noise) {
    h.absorb(p.dv.data(), static_cast<std::size_t>(p.dv.size()) * sizeof(double));
    h.absorb(p.dw.data(), static_cast<std::size_t>(p.dw.size()) * sizeof(double));
  }
  return h.value();
}

TrajectoryStats compute_stats(const std::vector<RolloutResult>& rollouts, const CostSpec& cost,
                              const TimeGrid& grid) {
  const int n = static_cast<int>(rollouts.size());
  if (n == 0) throw ConfigError("compute_stats: no rollouts");
  const int N = grid.n_steps;
  const int n_x = static_cast<int>(rollouts[0].x.cols());
  const int n_u = static_cast<int>(rollouts[0].u.cols());

  TrajectoryStats st;
  st.n = n;
  st.mean_x = Mat::Zero(N + 1, n_x);
  st.std_x = Mat::Zero(N + 1, n_x);
  st.mean_u = Mat::Zero(N + 1, n_u);
  st.std_u = Mat::Zero(N + 1, n_u);
  st.mean_v = Vec::Zero(N + 1);
  st.std_v = Vec::Zero(N + 1);
  st.terminal_cost = Vec::Zero(n);
  st.accumulated_cost = Vec::Zero(n);

  for (const RolloutResult& r : rollouts) {
    st.mean_x += r.x;
    st.mean_u.topRows(N) += r.u;
    st.mean_v += r.v;
  }
  const double inv = 1.0 / n;
  st.mean_x *= inv;
  st.mean_u *= inv;
  st.mean_v *= inv;

  if (n > 1) {
    for (const RolloutResult& r : rollouts) {
      st.std_x += (r.x - st.mean_x).cwiseAbs2();
      st.std_u.topRows(N) += (r.u - st.mean_u.topRows(N)).cwiseAbs2();
      st.std_v += (r.v - st.mean_v).cwiseAbs2();
    }
    const double ddof = 1.0 / (n - 1);
    st.std_x = (st.std_x * ddof).cwiseSqrt();
    st.std_u = (st.std_u * ddof).cwiseSqrt();
    st.std_v = (st.std_v * ddof).cwiseSqrt();
  }

  for (int i = 0; i < n; ++i) {
    const RolloutResult& r = rollouts[static_cast<std::size_t>(i)];
    const Vec x_n = r.x.row(N).transpose();
    st.terminal_cost(i) = cost.terminal(x_n);
    double j = st.terminal_cost(i);
    for (int k = 0; k < N; ++k) {
      const Vec x_k = r.x.row(k).transpose();
      const Vec u_k = r.u.row(k).transpose();
      j += (cost.running(x_k) + cost.control(u_k)) * grid.dt;
    }
    st.accumulated_cost(i) = j;
  }
  return st;
}

EvalRun evaluate_network(const DynamicsModel& model, const CostSpec& cost, const NetworkParams& params,
                         const TimeGrid& grid, int n_trials, std::uint64_t seed, ControlMode mode,
                         int threads) {
  const std::string policy =
      mode == ControlMode::kSecondOrder ? "second_order" : "first_order_baseline";
  return run_policy(model, cost, grid, n_trials, seed, threads, policy,
                    [&](const NoisePath& noise) {
                      return rollout(model, cost, params, grid, noise, model.x0, mode);
                    });
}

EvalRun evaluate_oracle(const DynamicsModel& model, const CostSpec& cost, const RiccatiSolution& sol,
                        int n_trials, std::uint64_t seed) {
  return run_policy(model, cost, sol.grid, n_trials, seed, 1, "oracle",
                    [&](const NoisePath& noise) { return analytic_rollout(sol, noise, model.x0); });
}

void write_trajectories_csv(const std::string& path, const EvalRun& run, const CostSpec& cost) {
  std::ofstream out = open_out(path);
  out << "trial,step,time";
  for (int j = 0; j < run.n_x; ++j) out << ",x_" << j;
  for (int j = 0; j < run.n_u; ++j) out << ",u_" << j;
  out << ",V,running_cost\n";
  const int N = run.grid.n_steps;
  for (std::size_t i = 0; i < run.rollouts.size(); ++i) {
    const RolloutResult& r = run.rollouts[i];
    for (int k = 0; k <= N; ++k) {
      out << run.trial_ids[i] << "," << k << "," << g17(run.grid.time(k));
      for (int j = 0; j < run.n_x; ++j) out << "," << g17(r.x(k, j));
      for (int j = 0; j < run.n_u; ++j) out << "," << g17(k < N ? r.u(k, j) : 0.0);
      const Vec x_k = r.x.row(k).transpose();
      double rc = cost.running(x_k);
      if (k < N) rc += cost.control(r.u.row(k).transpose());
      out << "," << g17(r.v(k)) << "," << g17(rc) << "\n";
    }
  }
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

void write_stats_csv(const std::string& path, const EvalRun& run) {
  std::ofstream out = open_out(path);
  out << "step,time";
  for (int j = 0; j < run.n_x; ++j) out << ",mean_x_" << j << ",std_x_" << j;
  for (int j = 0; j < run.n_u; ++j) out << ",mean_u_" << j << ",std_u_" << j;
  out << ",mean_V,std_V\n";
  const TrajectoryStats& st = run.stats;
  for (int k = 0; k <= run.grid.n_steps; ++k) {
    out << k << "," << g17(run.grid.time(k));
    for (int j = 0; j < run.n_x; ++j) out << "," << g17(st.mean_x(k, j)) << "," << g17(st.std_x(k, j));
    for (int j = 0; j < run.n_u; ++j) out << "," << g17(st.mean_u(k, j)) << "," << g17(st.std_u(k, j));
    out << "," << g17(st.mean_v(k)) << "," << g17(st.std_v(k)) << "\n";
  }
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

void write_summary_json(const std::string& path, const EvalRun& run, const std::string& model_name,
                        const std::string& config_digest) {
  nlohmann::json j;
  j["model"] = model_name;
  j["policy"] = run.policy;
  j["config_digest"] = config_digest;
  j["eval_seed"] = run.seed;
  j["n_trials"] = static_cast<int>(run.rollouts.size()) + run.failed;
  j["failed"] = run.failed;
  if (run.failed > 0) j["failure_note"] = run.failure_note;
  j["noise_digest"] = to_hex16(run.noise_digest);
  j["grid"] = {{"dt", run.grid.dt}, {"T", run.grid.horizon}, {"n_steps", run.grid.n_steps}};

  const TrajectoryStats& st = run.stats;
  const int n = st.n;
  const auto moments = [n](const Vec& v) {
    const double mean = v.mean();
    double sd = 0.0;
    if (n > 1) sd = std::sqrt((v.array() - mean).square().sum() / (n - 1));
    return nlohmann::json{{"mean", mean}, {"std", sd}};
  };
  j["terminal_cost"] = moments(st.terminal_cost);
  j["accumulated_cost"] = moments(st.accumulated_cost);

  const int N = run.grid.n_steps;
  std::vector<double> tm, ts;
  for (int c = 0; c < run.n_x; ++c) {
    tm.push_back(st.mean_x(N, c));
    ts.push_back(st.std_x(N, c));
  }
  j["terminal_state_mean"] = tm;
  j["terminal_state_std"] = ts;
  j["value_initial"] = {{"mean", st.mean_v(0)}, {"std", st.std_v(0)}};

  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

void write_riccati_csv(const std::string& path, const RiccatiSolution& sol) {
  std::ofstream out = open_out(path);
  const int n = static_cast<int>(sol.A.rows());
  out << "step,time";
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out << ",P_" << i << "_" << j;
  }
  for (int i = 0; i < n; ++i) out << ",S_" << i;
  out << ",c\n";
  for (int k = 0; k <= sol.grid.n_steps; ++k) {
    out << k << "," << g17(sol.grid.time(k));
    const Mat& P = sol.P[static_cast<std::size_t>(k)];
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) out << "," << g17(P(i, j));
    }
    const Vec& S = sol.S[static_cast<std::size_t>(k)];
    for (int i = 0; i < n; ++i) out << "," << g17(S(i));
    out << "," << g17(sol.c[static_cast<std::size_t>(k)]) << "\n";
  }
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV '" + path + "'");
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) t.header.push_back(tok);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(t.header.size());
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(std::strtod(tok.c_str(), nullptr));
    if (row.size() != t.header.size()) {
      throw ConfigError("ragged CSV row in '" + path + "'");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace fbsde
