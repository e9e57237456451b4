#pragma once

#include <Eigen/Dense>
#include <vector>

#include "fbsde/dynamics.hpp"
#include "fbsde/sde_core.hpp"

// Analytical baseline for linear dynamics dx = Ax dt + B(u dt + sigma u dv)
// + Sigma dw with quadratic cost. The value function is quadratic,
//   V(t, x) = 1/2 x'P(t)x + x'S(t) + c(t),
// and (P, S, c) solve, with Rhat = R + sigma^2 B'PB,
//   -Pdot = PA + A'P + Q - P B Rhat^-1 B' P
//   -Sdot = A'S - Q eta - P B Rhat^-1 B' S
//   -cdot = 1/2 eta'Q eta - 1/2 S'B Rhat^-1 B'S + 1/2 tr(P Sigma Sigma')
// backward from P(T) = Q_T, S(T) = -Q_T eta, c(T) = 1/2 eta'Q_T eta.
// Integration is classical RK4 with `substeps` sub-intervals per grid step;
// P is symmetrized after every sub-step. No jitter is applied here: a
// non-positive-definite Rhat is reported as an oracle failure.

namespace fbsde {

struct RiccatiSolution {
  Mat A, B, Sigma;
  double sigma = 0.0;
  CostSpec cost;
  TimeGrid grid;
  int substeps = 10;

  std::vector<Mat> P;        // n_steps + 1 nodes
  std::vector<Vec> S;
  std::vector<double> c;

  double value(int t_index, const Vec& x) const;
  Vec value_grad(int t_index, const Vec& x) const;  // P x + S
};

struct RiccatiDerivs {
  Mat Pdot;
  Vec Sdot;
  double cdot = 0.0;
};

// Forward-time derivatives of (P, S, c) at the given coefficients.
RiccatiDerivs riccati_time_derivative(const Mat& P, const Vec& S, const Mat& A, const Mat& B,
                                      const Mat& Sigma, double sigma, const CostSpec& cost);

RiccatiSolution solve_riccati(const Mat& A, const Mat& B, const Mat& Sigma, double sigma,
                              const CostSpec& cost, const TimeGrid& grid, int substeps = 10);

// Accepts only models built by linear_model().
RiccatiSolution solve_riccati(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                              int substeps = 10);

// u*(t_k, x) = -(R + sigma^2 B'P_k B)^-1 B'(P_k x + S_k)
Vec riccati_control(const RiccatiSolution& sol, int t_index, const Vec& x);

// Euler-Maruyama forward simulation under the analytic control law, consuming
// the same NoisePath layout as the network rollout (common random numbers).
RolloutResult analytic_rollout(const RiccatiSolution& sol, const NoisePath& noise, const Vec& x0);

}  // namespace fbsde
