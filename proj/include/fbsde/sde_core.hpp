#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "fbsde/dynamics.hpp"
#include "fbsde/value_net.hpp"

// Explicit Euler-Maruyama propagation of the coupled forward/backward system:
// the state SDE, the value BSDE and the value-gradient BSDE all consume the
// same Brownian increments (dv, dw) within a step, with coefficients frozen
// at the left endpoint.

namespace fbsde {

struct TimeGrid {
  int n_steps = 0;
  double dt = 0.0;
  double horizon = 0.0;  // n_steps * dt

  TimeGrid() = default;
  TimeGrid(int n, double step);
  // Validates that T is an integer multiple of dt (within 1e-9 relative).
  static TimeGrid from_horizon(double T, double step);
  double time(int k) const { return k * dt; }
};

// One sample path of Brownian increments: dv(t) ~ N(0, dt) drives the
// control-multiplicative channel, dw row t ~ N(0, I dt) the additive one.
struct NoisePath {
  Vec dv;  // n_steps
  Mat dw;  // n_steps x n_w
};

struct PathState {
  Vec x;
  double v = 0.0;
  Vec vx;
};

// Deterministic function of (seed, first_sample + i, step): chunked calls
// reproduce exactly the same paths as one big batch.
std::vector<NoisePath> sample_noise(const TimeGrid& grid, int n_w, int batch, std::uint64_t seed,
                                    int first_sample = 0);

Vec fsde_step(const Vec& x, const Vec& f, const Mat& G, const Vec& u, double sigma, const Mat& Sigma,
              double dv, const Vec& dw, double dt);

double bsde_v_step(double v, const Vec& vx, double q, const Mat& G, const Mat& vxx, const Vec& u,
                   const Mat& R, double sigma, const Mat& Sigma, double dv, const Vec& dw, double dt);

Vec bsde_vx_step(const Vec& vx, const Mat& vxx, const Vec& f, const Vec& a_corr, const Mat& G,
                 const Vec& u, double sigma, const Mat& Sigma, double dv, const Vec& dw, double dt);

enum class ControlMode {
  kSecondOrder,          // u* = -(R + sigma^2 G'Vxx G)^-1 G'Vx
  kFirstOrderBaseline,   // u  = -R^-1 G'Vx, simulated under the true sigma
};

struct RolloutResult {
  Mat x;                  // (N+1) x n_x
  Vec v;                  // N+1
  Mat vx;                 // (N+1) x n_x
  Mat u;                  // N x n_u
  std::vector<Mat> vxx;   // N+1 entries (terminal entry from the extra net pass)
  Mat a;                  // (N+1) x n_x
};

// Called once per time index in increasing order, 0..N inclusive; the
// terminal call provides the Vxx prediction at x_N.
using StepPredictor = std::function<NetworkOutput(int t_index, const Vec& x)>;

RolloutResult rollout_with_predictor(const DynamicsModel& model, const CostSpec& cost,
                                     const TimeGrid& grid, const NoisePath& noise, const Vec& x0,
                                     double v0, const Vec& vx0, const StepPredictor& predict,
                                     ControlMode mode = ControlMode::kSecondOrder);

// Network-driven rollout: V0 = psi, Vx0 = zeta, hidden state starts at zero.
RolloutResult rollout(const DynamicsModel& model, const CostSpec& cost, const NetworkParams& net,
                      const TimeGrid& grid, const NoisePath& noise, const Vec& x0,
                      ControlMode mode = ControlMode::kSecondOrder);

}  // namespace fbsde
