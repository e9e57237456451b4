#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "fbsde/linalg.hpp"
#include "fbsde/tape.hpp"

// Controlled SDE models of the form
//   dx = f(t,x) dt + G(t,x) (u dt + sigma u dv) + Sigma(t,x) dw
// with scalar Brownian motion v (control-multiplicative channel) and
// n_w-dimensional Brownian motion w (additive channel).

namespace fbsde {

struct CostSpec {
  Mat Q;     // running state cost
  Mat R;     // control cost
  Mat Q_T;   // terminal state cost
  Vec eta;   // target state

  double running(const Vec& x) const {
    const Vec d = x - eta;
    return 0.5 * d.dot(Q * d);
  }
  double control(const Vec& u) const { return 0.5 * u.dot(R * u); }
  double terminal(const Vec& x) const {
    const Vec d = x - eta;
    return 0.5 * d.dot(Q_T * d);
  }
  Vec terminal_grad(const Vec& x) const { return Q_T * (x - eta); }
  const Mat& terminal_hess() const { return Q_T; }

  void validate(int n_x, int n_u) const;
};

struct DynamicsModel {
  std::string name;
  int n_x = 0;
  int n_u = 0;
  int n_w = 0;
  double sigma = 0.0;  // control-multiplicative noise scale
  Vec x0;

  std::function<Vec(double t, const Vec& x)> drift;
  std::function<Mat(double t, const Vec& x)> actuation;
  std::function<Mat(double t, const Vec& x)> diffusion;

  // Differentiable versions of the state-dependent coefficients, used by the
  // training graph. Diffusion is state-independent for every built-in model
  // and enters the graph as a constant.
  std::function<ad::Var(ad::Tape&, double t, ad::Var x)> drift_ad;
  std::function<ad::Var(ad::Tape&, double t, ad::Var x)> actuation_ad;

  // Populated when drift = A x, actuation = B, diffusion = Sigma; the
  // analytical Riccati oracle only accepts such models.
  bool is_linear = false;
  Mat lin_A, lin_B, lin_Sigma;
};

struct DynamicsEval {
  Vec f;
  Mat G;
  Mat Sigma;
};

// Evaluates (f, G, Sigma) at (t, x). Throws PathFailureError on non-finite input.
DynamicsEval eval_dynamics(const DynamicsModel& model, double t, const Vec& x);

// dx = (A x) dt + B (u dt + sigma u dv) + Sigma dw
DynamicsModel linear_model(const Mat& A, const Mat& B, const Mat& Sigma, double sigma, const Vec& x0);

// Cart and pole, state [x, theta, xdot, thetadot], theta = 0 hanging down.
// Additive noise enters the two velocity channels scaled by sigma_add.
DynamicsModel cartpole_model(double m_p, double m_c, double l, double sigma, double sigma_add,
                             const Vec& x0);

// Quadcopter in NED coordinates, state [x y z phi theta psi, and their rates],
// controls are the four rotor torques tau; the mixer maps tau to
// (thrust, roll, pitch, yaw accelerations). Additive noise enters the six
// velocity/rate channels scaled by sigma_add.
DynamicsModel quadcopter_model(double m, double ixx, double iyy, double izz, double l, double d,
                               double sigma, double sigma_add, const Vec& x0);

// Rotor-torque to (u1..u4) mixing matrix of the quadcopter.
Mat quad_mixer(double d);

inline constexpr double kGravity = 9.81;

}  // namespace fbsde
