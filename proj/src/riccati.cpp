#include "fbsde/riccati.hpp"

#include <cmath>
#include <sstream>

#include "fbsde/errors.hpp"

namespace fbsde {

namespace {

// Cholesky of Rhat with a strict positive-definiteness check (no jitter).
Eigen::LLT<Mat> factor_rhat_strict(const Mat& R, const Mat& B, const Mat& P, double sigma) {
  const Mat rhat = R + (sigma * sigma) * B.transpose() * P * B;
  const Mat sym = 0.5 * (rhat + rhat.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > 0.0)) {
    std::ostringstream msg;
    msg << "riccati oracle: Rhat is not positive definite (lambda_min = " << lmin << ")";
    throw OracleError(msg.str());
  }
  Eigen::LLT<Mat> llt(sym);
  if (llt.info() != Eigen::Success) throw OracleError("riccati oracle: Cholesky of Rhat failed");
  return llt;
}

}  // namespace

RiccatiDerivs riccati_time_derivative(const Mat& P, const Vec& S, const Mat& A, const Mat& B,
                                      const Mat& Sigma, double sigma, const CostSpec& cost) {
  const Eigen::LLT<Mat> llt = factor_rhat_strict(cost.R, B, P, sigma);
  const Mat bt_p = B.transpose() * P;        // B'P
  const Mat k_p = llt.solve(bt_p);           // Rhat^-1 B'P
  const Vec bt_s = B.transpose() * S;
  const Vec k_s = llt.solve(bt_s);           // Rhat^-1 B'S

  RiccatiDerivs d;
  d.Pdot = -(P * A + A.transpose() * P + cost.Q - bt_p.transpose() * k_p);
  d.Sdot = -(A.transpose() * S - cost.Q * cost.eta - bt_p.transpose() * k_s);
  d.cdot = -(0.5 * cost.eta.dot(cost.Q * cost.eta) - 0.5 * bt_s.dot(k_s) +
             0.5 * (P * Sigma * Sigma.transpose()).trace());
  return d;
}

RiccatiSolution solve_riccati(const Mat& A, const Mat& B, const Mat& Sigma, double sigma,
                              const CostSpec& cost, const TimeGrid& grid, int substeps) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n || B.rows() != n || Sigma.rows() != n) {
    throw ConfigError("riccati: coefficient shapes inconsistent");
  }
  cost.validate(n, static_cast<int>(B.cols()));
  if (substeps < 1) throw ConfigError("riccati: substeps must be >= 1");

  RiccatiSolution sol;
  sol.A = A;
  sol.B = B;
  sol.Sigma = Sigma;
  sol.sigma = sigma;
  sol.cost = cost;
  sol.grid = grid;
  sol.substeps = substeps;
  const int N = grid.n_steps;
  sol.P.assign(static_cast<std::size_t>(N + 1), Mat());
  sol.S.assign(static_cast<std::size_t>(N + 1), Vec());
  sol.c.assign(static_cast<std::size_t>(N + 1), 0.0);

  Mat P = cost.Q_T;
  Vec S = -cost.Q_T * cost.eta;
  double c = 0.5 * cost.eta.dot(cost.Q_T * cost.eta);
  sol.P[static_cast<std::size_t>(N)] = P;
  sol.S[static_cast<std::size_t>(N)] = S;
  sol.c[static_cast<std::size_t>(N)] = c;

  const double h = -grid.dt / static_cast<double>(substeps);
  auto rhs = [&](const Mat& Pk, const Vec& Sk) {
    return riccati_time_derivative(Pk, Sk, A, B, Sigma, sigma, cost);
  };

  for (int k = N; k > 0; --k) {
    for (int s = 0; s < substeps; ++s) {
      const RiccatiDerivs k1 = rhs(P, S);
      const RiccatiDerivs k2 = rhs(P + 0.5 * h * k1.Pdot, S + 0.5 * h * k1.Sdot);
      const RiccatiDerivs k3 = rhs(P + 0.5 * h * k2.Pdot, S + 0.5 * h * k2.Sdot);
      const RiccatiDerivs k4 = rhs(P + h * k3.Pdot, S + h * k3.Sdot);
      P += (h / 6.0) * (k1.Pdot + 2.0 * k2.Pdot + 2.0 * k3.Pdot + k4.Pdot);
      S += (h / 6.0) * (k1.Sdot + 2.0 * k2.Sdot + 2.0 * k3.Sdot + k4.Sdot);
      c += (h / 6.0) * (k1.cdot + 2.0 * k2.cdot + 2.0 * k3.cdot + k4.cdot);
      P = 0.5 * (P + P.transpose());
    }
    if (!P.allFinite() || !S.allFinite() || !std::isfinite(c)) {
      throw OracleError("riccati: integration diverged at node " + std::to_string(k - 1));
    }
    sol.P[static_cast<std::size_t>(k - 1)] = P;
    sol.S[static_cast<std::size_t>(k - 1)] = S;
    sol.c[static_cast<std::size_t>(k - 1)] = c;
  }
  return sol;
}

RiccatiSolution solve_riccati(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                              int substeps) {
  if (!model.is_linear) {
    throw ConfigError("the analytical oracle supports linear dynamics only, got model '" +
                      model.name + "'");
  }
  return solve_riccati(model.lin_A, model.lin_B, model.lin_Sigma, model.sigma, cost, grid, substeps);
}

double RiccatiSolution::value(int t_index, const Vec& x) const {
  const auto k = static_cast<std::size_t>(t_index);
  return 0.5 * x.dot(P[k] * x) + x.dot(S[k]) + c[k];
}

Vec RiccatiSolution::value_grad(int t_index, const Vec& x) const {
  const auto k = static_cast<std::size_t>(t_index);
  return P[k] * x + S[k];
}

Vec riccati_control(const RiccatiSolution& sol, int t_index, const Vec& x) {
  const auto k = static_cast<std::size_t>(t_index);
  const Eigen::LLT<Mat> llt = factor_rhat_strict(sol.cost.R, sol.B, sol.P[k], sol.sigma);
  return -llt.solve(Vec(sol.B.transpose() * (sol.P[k] * x + sol.S[k])));
}

RolloutResult analytic_rollout(const RiccatiSolution& sol, const NoisePath& noise, const Vec& x0) {
  const int N = sol.grid.n_steps;
  const int n_x = static_cast<int>(sol.A.rows());
  if (noise.dv.size() != N || noise.dw.rows() != N || noise.dw.cols() != sol.Sigma.cols()) {
    throw ConfigError("analytic_rollout: noise path shape mismatch");
  }

  RolloutResult r;
  r.x.resize(N + 1, n_x);
  r.v.resize(N + 1);
  r.vx.resize(N + 1, n_x);
  r.u.resize(N, static_cast<int>(sol.B.cols()));
  r.vxx.resize(static_cast<std::size_t>(N + 1));
  r.a.resize(N + 1, n_x);

  Vec x = x0;
  for (int t = 0; t <= N; ++t) {
    r.x.row(t) = x.transpose();
    r.v(t) = sol.value(t, x);
    r.vx.row(t) = sol.value_grad(t, x).transpose();
    r.vxx[static_cast<std::size_t>(t)] = sol.P[static_cast<std::size_t>(t)];
    const RiccatiDerivs d = riccati_time_derivative(sol.P[static_cast<std::size_t>(t)],
                                                    sol.S[static_cast<std::size_t>(t)], sol.A, sol.B,
                                                    sol.Sigma, sol.sigma, sol.cost);
    r.a.row(t) = (d.Pdot * x + d.Sdot).transpose();
    if (t == N) break;

    const Vec u = riccati_control(sol, t, x);
    r.u.row(t) = u.transpose();
    try {
      x = fsde_step(x, Vec(sol.A * x), sol.B, u, sol.sigma, sol.Sigma, noise.dv(t),
                    Vec(noise.dw.row(t).transpose()), sol.grid.dt);
    } catch (PathFailureError& e) {
      if (e.step < 0) throw PathFailureError(e.what(), t);
      throw;
    }
  }
  return r;
}

}  // namespace fbsde
