// Command-line front end: train a controller, evaluate it (second-order or
// first-order-baseline policy), run the analytic Riccati oracle with common
// random numbers, verify gradients, and compare two evaluation runs.
//
// Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbsde/checkpoint.hpp"
#include "fbsde/config.hpp"
#include "fbsde/errors.hpp"
#include "fbsde/hash.hpp"
#include "fbsde/stats.hpp"
#include "fbsde/training.hpp"

namespace {

using namespace fbsde;

int env_threads() {
  const char* v = std::getenv("FBSDE_THREADS");
  if (!v || !*v) return 1;
  const int n = std::atoi(v);
  return n >= 0 ? n : 1;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::string seed;  // raw text; empty = not given
};

ExperimentConfig load_with_seed(const CommonArgs& args, const std::string& seed_key) {
  ParsedConfig raw = parse_config_file(args.config_path);
  for (const std::string& o : args.overrides) apply_override(raw, o);
  if (!args.seed.empty()) apply_override(raw, seed_key + "=" + args.seed);
  return resolve_config(raw);
}

int cmd_train(const CommonArgs& args) {
  ExperimentConfig cfg = load_with_seed(args, "training.seed");
  cfg.training.threads = env_threads();
  ensure_dir(args.out_dir);
  write_text(join(args.out_dir, "config.ini"), cfg.canonical);

  std::printf("model=%s digest=%s iterations=%d batch=%d\n", cfg.model.name.c_str(),
              cfg.digest.c_str(), cfg.training.iterations, cfg.training.batch);

  std::ofstream loss_csv(join(args.out_dir, "loss.csv"), std::ios::trunc);
  if (!loss_csv) throw ConfigError("cannot write loss.csv");
  loss_csv << "iteration,loss,wall_ms\n";

  const NetworkParams initial = init_params(cfg.network, cfg.training.seed);
  const int every = cfg.checkpoint_every;
  const std::string digest = cfg.digest;
  const std::string out_dir = args.out_dir;

  TrainCallback cb = [&](const TrainIterationInfo& info, const NetworkParams& p, const AdamState& a) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.3f\n", info.iteration, info.loss, info.wall_ms);
    loss_csv << buf;
    if (every > 0 && (info.iteration + 1) % every == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.bin", info.iteration + 1);
      save_checkpoint(join(out_dir, name), digest, static_cast<std::uint64_t>(info.iteration + 1), p,
                      &a);
    }
    if ((info.iteration + 1) % 100 == 0 || info.iteration == 0) {
      std::printf("iter %6d  loss %.6g  lr %.3g\n", info.iteration, info.loss, info.lr);
      std::fflush(stdout);
    }
  };

  const TrainResult result = train(cfg.model, cfg.cost, cfg.grid, initial, cfg.training, cb);
  loss_csv.flush();
  if (!loss_csv) throw ConfigError("write failed for loss.csv");

  save_checkpoint(join(args.out_dir, "checkpoint.bin"), cfg.digest,
                  static_cast<std::uint64_t>(cfg.training.iterations), result.params, &result.adam);
  std::printf("final_loss=%.17g checkpoint=%s\n", result.loss_history.back(),
              join(args.out_dir, "checkpoint.bin").c_str());
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path, bool force) {
  ExperimentConfig cfg = load_with_seed(args, "eval.eval_seed");
  const Checkpoint cp = load_checkpoint(checkpoint_path);
  if (cp.digest != cfg.digest) {
    if (!force) {
      throw ConfigError("checkpoint digest " + cp.digest + " does not match config digest " +
                        cfg.digest + " (pass --force to evaluate anyway)");
    }
    std::fprintf(stderr, "warning: digest mismatch (checkpoint %s, config %s), continuing (--force)\n",
                 cp.digest.c_str(), cfg.digest.c_str());
  }
  const NetworkParams params = params_from_checkpoint(cfg.network, cp);

  const EvalRun run = evaluate_network(cfg.model, cfg.cost, params, cfg.grid, cfg.eval.n_trials,
                                       cfg.eval.seed, cfg.eval.mode, env_threads());
  ensure_dir(args.out_dir);
  write_trajectories_csv(join(args.out_dir, "trajectories.csv"), run, cfg.cost);
  write_stats_csv(join(args.out_dir, "stats.csv"), run);
  write_summary_json(join(args.out_dir, "summary.json"), run, cfg.model.name, cfg.digest);

  std::printf("noise_digest=%s\n", to_hex16(run.noise_digest).c_str());
  std::printf("policy=%s trials=%d failed=%d\n", run.policy.c_str(), cfg.eval.n_trials, run.failed);
  std::printf("mean_accumulated_cost=%.17g\n", run.stats.accumulated_cost.mean());
  std::printf("mean_terminal_cost=%.17g\n", run.stats.terminal_cost.mean());
  return 0;
}

int cmd_oracle(const CommonArgs& args) {
  ExperimentConfig cfg = load_with_seed(args, "eval.eval_seed");
  const RiccatiSolution sol = solve_riccati(cfg.model, cfg.cost, cfg.grid);
  const EvalRun run = evaluate_oracle(cfg.model, cfg.cost, sol, cfg.eval.n_trials, cfg.eval.seed);

  ensure_dir(args.out_dir);
  write_riccati_csv(join(args.out_dir, "riccati.csv"), sol);
  write_trajectories_csv(join(args.out_dir, "trajectories.csv"), run, cfg.cost);
  write_stats_csv(join(args.out_dir, "stats.csv"), run);
  write_summary_json(join(args.out_dir, "summary.json"), run, cfg.model.name, cfg.digest);

  std::printf("noise_digest=%s\n", to_hex16(run.noise_digest).c_str());
  std::printf("policy=oracle trials=%d failed=%d\n", cfg.eval.n_trials, run.failed);
  std::printf("mean_accumulated_cost=%.17g\n", run.stats.accumulated_cost.mean());
  std::printf("mean_terminal_cost=%.17g\n", run.stats.terminal_cost.mean());
  std::printf("value_initial=%.17g\n", sol.value(0, cfg.model.x0));
  return 0;
}

int cmd_gradcheck(const CommonArgs& args, double tolerance) {
  const ExperimentConfig cfg = load_with_seed(args, "training.seed");
  const NetworkParams params = init_params(cfg.network, cfg.training.seed);
  const std::vector<NoisePath> noise =
      sample_noise(cfg.grid, cfg.model.n_w, cfg.training.batch, cfg.training.seed);
  const GradCheckReport report =
      gradient_check(cfg.model, cfg.cost, cfg.grid, params, cfg.training.weights, noise);

  std::printf("%-16s %14s %14s\n", "parameter", "max_rel_err", "max_abs_grad");
  for (const GradCheckGroup& g : report.groups) {
    std::printf("%-16s %14.3e %14.3e\n", g.name.c_str(), g.max_rel_err, g.max_abs_grad);
  }
  const bool pass = report.pass(tolerance);
  std::printf("%s worst=%.3e (%s) tolerance=%.3e\n", pass ? "PASS" : "FAIL", report.worst,
              report.worst_name.c_str(), tolerance);
  if (!pass) {
    throw NumericalError("gradient check failed: " + report.worst_name + " relative error " +
                         std::to_string(report.worst));
  }
  return 0;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
  return j;
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b, const std::string& out_dir) {
  const nlohmann::json sa = read_json(join(dir_a, "summary.json"));
  const nlohmann::json sb = read_json(join(dir_b, "summary.json"));
  if (sa["grid"] != sb["grid"]) {
    throw ConfigError("grid mismatch between runs: " + sa["grid"].dump() + " vs " + sb["grid"].dump());
  }
  const CsvTable ta = read_csv(join(dir_a, "stats.csv"));
  const CsvTable tb = read_csv(join(dir_b, "stats.csv"));
  if (ta.rows.size() != tb.rows.size()) throw ConfigError("stats row count mismatch between runs");

  nlohmann::json out;
  out["run_a"] = {{"dir", dir_a}, {"policy", sa["policy"]}};
  out["run_b"] = {{"dir", dir_b}, {"policy", sb["policy"]}};
  const double d_term =
      sa["terminal_cost"]["mean"].get<double>() - sb["terminal_cost"]["mean"].get<double>();
  const double d_acc =
      sa["accumulated_cost"]["mean"].get<double>() - sb["accumulated_cost"]["mean"].get<double>();
  out["mean_terminal_cost"] = {{"a", sa["terminal_cost"]["mean"]},
                               {"b", sb["terminal_cost"]["mean"]},
                               {"delta", d_term}};
  out["mean_accumulated_cost"] = {{"a", sa["accumulated_cost"]["mean"]},
                                  {"b", sb["accumulated_cost"]["mean"]},
                                  {"delta", d_acc}};

  std::printf("%-24s %16s %16s %16s\n", "quantity", "run_a", "run_b", "delta");
  std::printf("%-24s %16.8g %16.8g %16.8g\n", "mean_terminal_cost",
              sa["terminal_cost"]["mean"].get<double>(), sb["terminal_cost"]["mean"].get<double>(),
              d_term);
  std::printf("%-24s %16.8g %16.8g %16.8g\n", "mean_accumulated_cost",
              sa["accumulated_cost"]["mean"].get<double>(),
              sb["accumulated_cost"]["mean"].get<double>(), d_acc);

  nlohmann::json channels = nlohmann::json::array();
  const std::size_t last = ta.rows.size() - 1;
  for (std::size_t c = 0; c < ta.header.size(); ++c) {
    const std::string& name = ta.header[c];
    if (name.rfind("mean_", 0) != 0 && name.rfind("std_", 0) != 0) continue;
    if (tb.column(name) < 0) throw ConfigError("stats column mismatch: '" + name + "'");
    const std::size_t cb = static_cast<std::size_t>(tb.column(name));
    double max_gap = 0.0;
    for (std::size_t r = 0; r < ta.rows.size(); ++r) {
      max_gap = std::max(max_gap, std::abs(ta.rows[r][c] - tb.rows[r][cb]));
    }
    const double terminal_delta = ta.rows[last][c] - tb.rows[last][cb];
    channels.push_back({{"channel", name}, {"terminal_delta", terminal_delta}, {"max_gap", max_gap}});
    std::printf("%-24s %16.8g %16.8g %16.8g\n", name.c_str(), ta.rows[last][c], tb.rows[last][cb],
                terminal_delta);
  }
  out["channels"] = channels;

  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(join(out_dir, "compare.json"), out.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep 2FBSDE controller harness"};
  app.require_subcommand(1);

  CommonArgs args;
  bool force = false;
  std::string checkpoint_path;
  double tolerance = 1e-4;
  std::string dir_a, dir_b;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    if (needs_out) cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", args.seed, "override the command's seed");
    cmd->add_option("--set", args.overrides, "config override section.key=value");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a controller");
  add_common(train_cmd, true);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_flag("--force", force, "evaluate despite a config digest mismatch");

  CLI::App* oracle_cmd = app.add_subcommand("oracle", "analytic Riccati baseline (linear models)");
  add_common(oracle_cmd, true);

  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck_cmd, false);
  gradcheck_cmd->add_option("--tolerance", tolerance, "max allowed relative error");

  CLI::App* compare_cmd = app.add_subcommand("compare", "compare two evaluation runs");
  compare_cmd->add_option("--a", dir_a, "first run directory")->required();
  compare_cmd->add_option("--b", dir_b, "second run directory")->required();
  compare_cmd->add_option("--out", args.out_dir, "directory for compare.json");

  try {
    app.parse(argc, argv);
    if (train_cmd->parsed()) return cmd_train(args);
    if (eval_cmd->parsed()) return cmd_eval(args, checkpoint_path, force);
    if (oracle_cmd->parsed()) return cmd_oracle(args);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(args, tolerance);
    if (compare_cmd->parsed()) return cmd_compare(dir_a, dir_b, args.out_dir);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const fbsde::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const fbsde::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  }
}
