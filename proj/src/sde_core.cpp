#include "fbsde/sde_core.hpp"

#include <cmath>
#include <sstream>

#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"

namespace fbsde {

TimeGrid::TimeGrid(int n, double step) : n_steps(n), dt(step), horizon(n * step) {
  if (n < 1) throw ConfigError("time grid: n_steps must be >= 1");
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("time grid: dt must be positive");
}

TimeGrid TimeGrid::from_horizon(double T, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("time grid: dt must be positive");
  if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("time grid: horizon must be positive");
  const double ratio = T / step;
  const long long n = std::llround(ratio);
  if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * std::max(1.0, ratio)) {
    std::ostringstream msg;
    msg << "time grid: horizon " << T << " is not an integer multiple of dt " << step;
    throw ConfigError(msg.str());
  }
  return TimeGrid(static_cast<int>(n), step);
}

std::vector<NoisePath> sample_noise(const TimeGrid& grid, int n_w, int batch, std::uint64_t seed,
                                    int first_sample) {
  if (n_w < 0) throw ConfigError("sample_noise: n_w must be >= 0");
  if (batch < 0 || first_sample < 0) throw ConfigError("sample_noise: negative batch or offset");
  const double sqrt_dt = std::sqrt(grid.dt);
  std::vector<NoisePath> out(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const std::uint64_t sample = static_cast<std::uint64_t>(first_sample + i);
    NoisePath& p = out[static_cast<std::size_t>(i)];
    p.dv.resize(grid.n_steps);
    p.dw.resize(grid.n_steps, n_w);
    for (int t = 0; t < grid.n_steps; ++t) {
      const std::uint64_t step = static_cast<std::uint64_t>(t);
      p.dv(t) = sqrt_dt * key_normal({seed, kDomainNoise, sample, step, 0});
      for (int j = 0; j < n_w; ++j) {
        p.dw(t, j) = sqrt_dt * key_normal({seed, kDomainNoise, sample, step, 1 + static_cast<std::uint64_t>(j)});
      }
    }
  }
  return out;
}

Vec fsde_step(const Vec& x, const Vec& f, const Mat& G, const Vec& u, double sigma, const Mat& Sigma,
              double dv, const Vec& dw, double dt) {
  Vec next = x + f * dt + G * ((dt + sigma * dv) * u) + Sigma * dw;
  if (!next.allFinite()) throw PathFailureError("fsde_step: non-finite state");
  return next;
}

double bsde_v_step(double v, const Vec& vx, double q, const Mat& G, const Mat& vxx, const Vec& u,
                   const Mat& R, double sigma, const Mat& Sigma, double dv, const Vec& dw, double dt) {
  const Mat K = G.transpose() * vxx * G;
  const SpdFactor rf = factor_spd_with_jitter(R + (sigma * sigma) * K);
  const Vec m = rf.solve(Vec(G.transpose() * vx));
  const double quad = m.dot((R + (2.0 * sigma * sigma) * K) * m);
  const double next = v - (q - 0.5 * quad) * dt + vx.dot(G * ((dt + sigma * dv) * u)) +
                      vx.dot(Sigma * dw);
  if (!std::isfinite(next)) throw PathFailureError("bsde_v_step: non-finite value");
  return next;
}

Vec bsde_vx_step(const Vec& vx, const Mat& vxx, const Vec& f, const Vec& a_corr, const Mat& G,
                 const Vec& u, double sigma, const Mat& Sigma, double dv, const Vec& dw, double dt) {
  Vec next = vx + (a_corr + vxx * f) * dt + vxx * (G * ((dt + sigma * dv) * u)) + vxx * (Sigma * dw);
  if (!next.allFinite()) throw PathFailureError("bsde_vx_step: non-finite value gradient");
  return next;
}

RolloutResult rollout_with_predictor(const DynamicsModel& model, const CostSpec& cost,
                                     const TimeGrid& grid, const NoisePath& noise, const Vec& x0,
                                     double v0, const Vec& vx0, const StepPredictor& predict,
                                     ControlMode mode) {
  const int N = grid.n_steps;
  if (noise.dv.size() != N || noise.dw.rows() != N || noise.dw.cols() != model.n_w) {
    throw ConfigError("rollout: noise path shape does not match grid/model");
  }
  if (x0.size() != model.n_x || vx0.size() != model.n_x) {
    throw ConfigError("rollout: initial condition dimension mismatch");
  }

  RolloutResult r;
  r.x.resize(N + 1, model.n_x);
  r.v.resize(N + 1);
  r.vx.resize(N + 1, model.n_x);
  r.u.resize(N, model.n_u);
  r.vxx.resize(static_cast<std::size_t>(N + 1));
  r.a.resize(N + 1, model.n_x);

  Vec x = x0;
  double v = v0;
  Vec vx = vx0;
  const double control_sigma = (mode == ControlMode::kSecondOrder) ? model.sigma : 0.0;

  for (int t = 0; t <= N; ++t) {
    r.x.row(t) = x.transpose();
    r.v(t) = v;
    r.vx.row(t) = vx.transpose();
    const NetworkOutput out = predict(t, x);
    r.vxx[static_cast<std::size_t>(t)] = out.vxx;
    r.a.row(t) = out.a.transpose();
    if (t == N) break;

    try {
      const DynamicsEval dyn = eval_dynamics(model, grid.time(t), x);
      const Vec u = optimal_control(vx, out.vxx, dyn.G, cost.R, control_sigma);
      r.u.row(t) = u.transpose();
      const double q = cost.running(x);
      const double dv = noise.dv(t);
      const Vec dw = noise.dw.row(t).transpose();
      const Vec x1 = fsde_step(x, dyn.f, dyn.G, u, model.sigma, dyn.Sigma, dv, dw, grid.dt);
      const double v1 =
          bsde_v_step(v, vx, q, dyn.G, out.vxx, u, cost.R, model.sigma, dyn.Sigma, dv, dw, grid.dt);
      const Vec vx1 =
          bsde_vx_step(vx, out.vxx, dyn.f, out.a, dyn.G, u, model.sigma, dyn.Sigma, dv, dw, grid.dt);
      x = x1;
      v = v1;
      vx = vx1;
    } catch (PathFailureError& e) {
      if (e.step < 0) throw PathFailureError(e.what(), t);
      throw;
    }
  }
  return r;
}

RolloutResult rollout(const DynamicsModel& model, const CostSpec& cost, const NetworkParams& net,
                      const TimeGrid& grid, const NoisePath& noise, const Vec& x0, ControlMode mode) {
  HiddenState hidden = HiddenState::zero(net);
  StepPredictor predict = [&net, &hidden](int, const Vec& x) {
    ForwardResult fr = net_forward(net, x, hidden);
    hidden = std::move(fr.next);
    return fr.out;
  };
  return rollout_with_predictor(model, cost, grid, noise, x0, net.psi(0, 0), net.zeta.col(0), predict,
                                mode);
}

}  // namespace fbsde
