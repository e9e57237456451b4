#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fbsde/sde_core.hpp"
#include "fbsde/value_net.hpp"

// Self-supervised training of the value network: roll the coupled system
// forward under the network's own control law, regress the propagated
// (V, Vx) and the predicted Vxx onto the terminal-condition targets computed
// from the reached state, and backpropagate through the whole unrolled graph
// including the control path.

namespace fbsde {

struct LossWeights {
  double c1 = 1.0;  // (V* - V_N)^2
  double c2 = 1.0;  // |Vx* - Vx_N|^2
  double c3 = 1.0;  // |Vxx* - Vxx_N|_F^2
  double c4 = 0.0;  // |V*|^2
  double lambda = 0.0;  // L2 on weights, psi/zeta excluded
};

struct TrainingConfig {
  int iterations = 1000;
  int batch = 64;
  double lr = 1e-3;
  int lr_decay_every = 0;  // 0 disables step decay
  double lr_decay_factor = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 10.0;  // global-norm clip, <= 0 disables
  std::uint64_t seed = 0;
  LossWeights weights;
  int threads = 0;  // 0 = hardware concurrency
  double max_failed_fraction = 0.1;
};

// Sum of squared weight entries, psi and zeta excluded.
double l2_excl_psi_zeta(const NetworkParams& params);

// Minibatch loss from terminal quantities (plain, non-differentiable path).
double compute_loss(const std::vector<double>& v_n, const std::vector<Vec>& vx_n,
                    const std::vector<Mat>& vxx_n, const std::vector<Vec>& x_n, const CostSpec& cost,
                    const LossWeights& w, const NetworkParams& params);

using GradArrays = std::vector<Mat>;  // named_arrays order

struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  long t = 0;
  static AdamState zero(const NetworkParams& params);
};

void adam_step(NetworkParams& params, const GradArrays& grads, AdamState& st, double lr, double beta1,
               double beta2, double eps);

double global_grad_norm(const GradArrays& grads);
void clip_gradients(GradArrays& grads, double clip_norm);

struct BatchGrad {
  double loss = 0.0;
  GradArrays grads;
  int dropped = 0;
};

// Mean loss and its exact gradient over a batch of noise paths. Samples whose
// rollout fails (non-finite values, singular control) are dropped; more than
// max_failed_fraction of the batch failing aborts with TrainingError.
BatchGrad loss_and_gradients(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                             const NetworkParams& params, const LossWeights& w,
                             const std::vector<NoisePath>& noise, int threads = 1,
                             double max_failed_fraction = 0.1);

// Same scalar via the plain rollout; the finite-difference reference path.
double batch_loss_plain(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                        const NetworkParams& params, const LossWeights& w,
                        const std::vector<NoisePath>& noise);

struct TrainIterationInfo {
  int iteration = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
  double lr = 0.0;
  int dropped = 0;
};
using TrainCallback =
    std::function<void(const TrainIterationInfo&, const NetworkParams&, const AdamState&)>;

struct TrainResult {
  NetworkParams params;
  AdamState adam;
  std::vector<double> loss_history;
};

TrainResult train(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                  NetworkParams initial, const TrainingConfig& cfg,
                  const TrainCallback& callback = nullptr);

// --- gradient verification ---------------------------------------------------

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;  // one entry per parameter array
  double worst = 0.0;
  std::string worst_name;
  bool pass(double tol) const { return worst <= tol; }
};

// Test fixture: lets a test corrupt the backward gradients before comparison.
using GradCorruptHook = std::function<void(GradArrays&)>;

// Central finite differences (step fd_step) on every scalar parameter against
// the backward gradients; relative error uses denominator max(1, |ad|, |fd|).
GradCheckReport gradient_check(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                               const NetworkParams& params, const LossWeights& w,
                               const std::vector<NoisePath>& noise, double fd_step = 1e-5,
                               const GradCorruptHook& corrupt = nullptr);

}  // namespace fbsde
