#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"
#include "fbsde/sde_core.hpp"

using namespace fbsde;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }
Vec v1(double v) { return Vec::Constant(1, v); }

DynamicsModel scalar_model(double a, double b, double c, double sigma, double x0) {
  return linear_model(m1(a), m1(b), m1(c), sigma, v1(x0));
}

CostSpec scalar_cost(double q, double r, double q_t, double eta = 0.0) {
  CostSpec cost;
  cost.Q = m1(q);
  cost.R = m1(r);
  cost.Q_T = m1(q_t);
  cost.eta = v1(eta);
  return cost;
}

StepPredictor constant_predictor(double vxx, double a) {
  return [vxx, a](int, const Vec&) {
    NetworkOutput out;
    out.vxx = m1(vxx);
    out.a = v1(a);
    return out;
  };
}

}  // namespace

TEST_CASE("time grid construction") {
  const TimeGrid g = TimeGrid::from_horizon(1.0, 0.004);
  CHECK(g.n_steps == 250);
  CHECK(g.dt == 0.004);
  CHECK(g.horizon == 1.0);
  CHECK(g.time(250) == doctest::Approx(1.0).epsilon(1e-15));

  CHECK(TimeGrid::from_horizon(2.0, 0.02).n_steps == 100);
  CHECK_THROWS_AS(TimeGrid::from_horizon(1.0, 0.3), ConfigError);
  CHECK_THROWS_AS(TimeGrid::from_horizon(1.0, -0.1), ConfigError);
  CHECK_THROWS_AS(TimeGrid::from_horizon(0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(TimeGrid(0, 0.1), ConfigError);
  CHECK_THROWS_AS(TimeGrid(10, 0.0), ConfigError);
}

TEST_CASE("noise sampling is deterministic and chunk-invariant") {
  const TimeGrid g(5, 0.01);
  const auto a = sample_noise(g, 2, 10, 77);
  const auto b = sample_noise(g, 2, 10, 77);
  REQUIRE(a.size() == 10);
  CHECK(a[3].dv == b[3].dv);
  CHECK(a[3].dw == b[3].dw);
  CHECK(a[0].dv.size() == 5);
  CHECK(a[0].dw.rows() == 5);
  CHECK(a[0].dw.cols() == 2);

  // A chunk starting at offset 7 reproduces samples 7.. of the big batch.
  const auto tail = sample_noise(g, 2, 3, 77, 7);
  CHECK(tail[0].dv == a[7].dv);
  CHECK(tail[0].dw == a[7].dw);
  CHECK(tail[2].dw == a[9].dw);

  const auto other = sample_noise(g, 2, 1, 78);
  CHECK(other[0].dv != a[0].dv);

  // dv and dw draws never collide across channels.
  CHECK(a[0].dv(0) != a[0].dw(0, 0));
}

TEST_CASE("noise increments have the right moments") {
  const TimeGrid g(250, 0.004);
  const int batch = 800;
  const auto paths = sample_noise(g, 1, batch, 2024);
  const double n = static_cast<double>(batch) * g.n_steps;

  double sum = 0.0, sum_sq = 0.0, sum_w = 0.0, sum_w_sq = 0.0;
  for (const auto& p : paths) {
    sum += p.dv.sum();
    sum_sq += p.dv.squaredNorm();
    sum_w += p.dw.sum();
    sum_w_sq += p.dw.squaredNorm();
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  const double mean_w = sum_w / n;
  const double var_w = sum_w_sq / n - mean_w * mean_w;

  const double se_mean = std::sqrt(g.dt / n);
  const double se_var = g.dt * std::sqrt(2.0 / (n - 1.0));
  CHECK(std::abs(mean) <= 3.0 * se_mean);
  CHECK(std::abs(var - g.dt) <= 3.0 * se_var);
  CHECK(std::abs(mean_w) <= 3.0 * se_mean);
  CHECK(std::abs(var_w - g.dt) <= 3.0 * se_var);
}

TEST_CASE("state step hand values") {
  SUBCASE("all quiet") {
    const Vec next = fsde_step(v1(1.0), v1(0.0), m1(1.0), v1(0.0), 0.5, m1(0.1), 0.0, v1(0.0), 0.004);
    CHECK(next(0) == 1.0);
  }
  SUBCASE("every term contributes") {
    // 1 + 0.5*0.02 + 2*(0.25*0.02 + 0.5*0.25*0.04) + 0.1*0.2 = 1.05
    const Vec next = fsde_step(v1(1.0), v1(0.5), m1(2.0), v1(0.25), 0.5, m1(0.1), 0.04, v1(0.2), 0.02);
    CHECK(next(0) == doctest::Approx(1.05).epsilon(1e-15));
  }
  SUBCASE("zero noise and control reduce to explicit Euler") {
    Vec x(2), f(2);
    x << 1.0, -2.0;
    f << 0.25, 0.5;
    const Mat G = Mat::Ones(2, 1);
    const Mat S = Mat::Identity(2, 2);
    const Vec next = fsde_step(x, f, G, Vec::Zero(1), 0.7, S, 0.9, Vec::Zero(2), 0.1);
    CHECK(next == Vec(x + 0.1 * f).eval());
  }
  SUBCASE("non-finite result raises a path failure") {
    const double huge = std::numeric_limits<double>::max();
    CHECK_THROWS_AS(fsde_step(v1(huge), v1(huge), m1(1.0), v1(0.0), 0.0, m1(0.0), 0.0, v1(0.0), 1.0),
                    PathFailureError);
  }
}

TEST_CASE("value step hand values") {
  SUBCASE("zero gradient, zero running cost") {
    const double next =
        bsde_v_step(5.0, v1(0.0), 0.0, m1(1.0), m1(2.0), v1(0.3), m1(2.0), 0.5, m1(0.1), 0.7, v1(0.3), 0.1);
    CHECK(next == 5.0);
  }
  SUBCASE("pure running cost decrement") {
    const double next =
        bsde_v_step(5.0, v1(0.0), 3.0, m1(1.0), m1(2.0), v1(0.0), m1(2.0), 0.0, m1(0.0), 0.0, v1(0.0), 0.1);
    CHECK(next == doctest::Approx(5.0 - 0.3).epsilon(1e-15));
  }
  SUBCASE("quadratic relaxation term plus control drift") {
    // Rhat = 2 + 0.25*8 = 4, m = 4/4 = 1, quad = 1*(2 + 2*0.25*8)*1 = 6,
    // dV = -(0 - 3)*0.01 + 4*1*(-1*0.01) = 0.03 - 0.04 = -0.01.
    const double next =
        bsde_v_step(7.0, v1(4.0), 0.0, m1(1.0), m1(8.0), v1(-1.0), m1(2.0), 0.5, m1(0.0), 0.0, v1(0.0), 0.01);
    CHECK(next == doctest::Approx(7.0 - 0.01).epsilon(1e-13));
  }
  SUBCASE("matches a direct evaluation on random multidimensional inputs") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const int n_x = 3, n_u = 2, n_w = 2;
      Vec vx(n_x), u(n_u), dw(n_w);
      Mat G(n_x, n_u), Sig(n_x, n_w), vxx(n_x, n_x);
      for (int i = 0; i < n_x; ++i) {
        vx(i) = rng.uniform(-1, 1);
        for (int j = 0; j < n_u; ++j) G(i, j) = rng.uniform(-1, 1);
        for (int j = 0; j < n_w; ++j) Sig(i, j) = rng.uniform(-1, 1);
      }
      Mat root = Mat::Zero(n_x, n_x);
      for (int i = 0; i < n_x; ++i)
        for (int j = 0; j < n_x; ++j) root(i, j) = rng.uniform(-1, 1);
      vxx = root + root.transpose();
      for (int j = 0; j < n_u; ++j) u(j) = rng.uniform(-1, 1);
      for (int j = 0; j < n_w; ++j) dw(j) = rng.uniform(-0.1, 0.1);
      const Mat R = 2.0 * Mat::Identity(n_u, n_u);
      const double sigma = 0.4, dt = 0.02, dv = rng.uniform(-0.1, 0.1);
      const double q = rng.uniform(0, 1), v = rng.uniform(-1, 1);

      const Mat K = G.transpose() * vxx * G;
      const Mat rhat = R + sigma * sigma * K;
      const Vec m = rhat.llt().solve(G.transpose() * vx);
      const double quad = m.dot((R + 2 * sigma * sigma * K) * m);
      const double expect = v - (q - 0.5 * quad) * dt + vx.dot(G * (u * dt + sigma * dv * u)) +
                            vx.dot(Sig * dw);

      const double got = bsde_v_step(v, vx, q, G, vxx, u, R, sigma, Sig, dv, dw, dt);
      CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("value gradient step hand values") {
  SUBCASE("stationary") {
    const Vec next = bsde_vx_step(v1(1.5), m1(2.0), v1(0.0), v1(0.0), m1(1.0), v1(0.0), 0.5, m1(0.0),
                                  0.0, v1(0.0), 0.1);
    CHECK(next(0) == 1.5);
  }
  SUBCASE("pure correction drift") {
    Vec vx(2), a(2);
    vx << 1.0, 2.0;
    a << 1.0, 0.0;
    const Vec next = bsde_vx_step(vx, Mat::Zero(2, 2), Vec::Zero(2), a, Mat::Ones(2, 1), Vec::Zero(1),
                                  0.0, Mat::Zero(2, 2), 0.0, Vec::Zero(2), 0.5);
    CHECK(next(0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(next(1) == 2.0);
  }
  SUBCASE("all three transport terms") {
    // (A + Vxx f) dt + Vxx G u dt + Vxx Sigma dw = 0.2 + 0.2 + 0.2 = 0.6
    const Vec next = bsde_vx_step(v1(0.0), m1(2.0), v1(1.0), v1(0.0), m1(1.0), v1(1.0), 0.0, m1(1.0),
                                  0.0, v1(0.1), 0.1);
    CHECK(next(0) == doctest::Approx(0.6).epsilon(1e-14));
  }
}

TEST_CASE("single-step rollout composes the three step ops") {
  const DynamicsModel model = scalar_model(0.3, 2.0, 0.1, 0.5, 1.0);
  const CostSpec cost = scalar_cost(1.0, 2.0, 80.0);
  const TimeGrid grid(1, 0.02);
  NoisePath noise;
  noise.dv = v1(0.04);
  noise.dw = m1(0.2);

  const double v0 = 2.0;
  const Vec vx0 = v1(4.0);
  const RolloutResult r = rollout_with_predictor(model, cost, grid, noise, model.x0, v0, vx0,
                                                 constant_predictor(8.0, 0.7));

  // u* = -(R + s^2 G'VxxG)^-1 G'Vx = -(2 + 0.25*32)^-1 * 8 = -0.8
  CHECK(r.u(0, 0) == doctest::Approx(-0.8).epsilon(1e-14));
  CHECK(r.x(0, 0) == 1.0);
  CHECK(r.v(0) == 2.0);
  CHECK(r.vx(0, 0) == 4.0);
  CHECK(r.vxx[0](0, 0) == 8.0);
  CHECK(r.vxx[1](0, 0) == 8.0);
  CHECK(r.a(1, 0) == 0.7);

  const Vec u = v1(r.u(0, 0));
  const Vec dw = v1(0.2);
  const Vec x1 = fsde_step(v1(1.0), v1(0.3), m1(2.0), u, 0.5, m1(0.1), 0.04, dw, 0.02);
  const double q = cost.running(v1(1.0));
  const double v1_expect =
      bsde_v_step(v0, vx0, q, m1(2.0), m1(8.0), u, cost.R, 0.5, m1(0.1), 0.04, dw, 0.02);
  const Vec vx1 = bsde_vx_step(vx0, m1(8.0), v1(0.3), v1(0.7), m1(2.0), u, 0.5, m1(0.1), 0.04, dw, 0.02);

  CHECK(r.x(1, 0) == x1(0));
  CHECK(r.v(1) == v1_expect);
  CHECK(r.vx(1, 0) == vx1(0));
}

TEST_CASE("first-order baseline only changes the control law") {
  const DynamicsModel model = scalar_model(0.3, 2.0, 0.1, 0.5, 1.0);
  const CostSpec cost = scalar_cost(1.0, 2.0, 80.0);
  const TimeGrid grid(1, 0.02);
  NoisePath noise;
  noise.dv = v1(0.04);
  noise.dw = m1(0.2);

  const RolloutResult r = rollout_with_predictor(model, cost, grid, noise, model.x0, 2.0, v1(4.0),
                                                 constant_predictor(8.0, 0.7),
                                                 ControlMode::kFirstOrderBaseline);
  // u = -R^-1 G'Vx = -8/2 = -4, but the path still sees sigma = 0.5.
  CHECK(r.u(0, 0) == doctest::Approx(-4.0).epsilon(1e-14));
  const Vec x1 = fsde_step(v1(1.0), v1(0.3), m1(2.0), v1(-4.0), 0.5, m1(0.1), 0.04, v1(0.2), 0.02);
  CHECK(r.x(1, 0) == doctest::Approx(x1(0)).epsilon(1e-14));
}

TEST_CASE("control modes coincide exactly when sigma is zero") {
  const DynamicsModel model = scalar_model(0.2, 1.0, 0.3, 0.0, 1.0);
  const CostSpec cost = scalar_cost(0.0, 2.0, 80.0);
  const TimeGrid grid(20, 0.01);
  const auto noise = sample_noise(grid, 1, 1, 5);
  const NetworkParams net = init_params({1, {6}, "xavier", 0.1}, 3);

  const RolloutResult a = rollout(model, cost, net, grid, noise[0], model.x0, ControlMode::kSecondOrder);
  const RolloutResult b =
      rollout(model, cost, net, grid, noise[0], model.x0, ControlMode::kFirstOrderBaseline);
  CHECK(a.x == b.x);
  CHECK(a.u == b.u);
  CHECK(a.v == b.v);

  const DynamicsModel noisy = scalar_model(0.2, 1.0, 0.3, 0.5, 1.0);
  const RolloutResult c = rollout(noisy, cost, net, grid, noise[0], noisy.x0, ControlMode::kSecondOrder);
  const RolloutResult d =
      rollout(noisy, cost, net, grid, noise[0], noisy.x0, ControlMode::kFirstOrderBaseline);
  CHECK(c.u(0, 0) != d.u(0, 0));
}

TEST_CASE("network rollout equals a predictor rollout with carried hidden state") {
  const DynamicsModel model = scalar_model(0.2, 1.0, 0.5, 0.5, 1.0);
  const CostSpec cost = scalar_cost(0.0, 2.0, 80.0);
  const TimeGrid grid(10, 0.01);
  const auto noise = sample_noise(grid, 1, 1, 9);
  const NetworkParams net = init_params({1, {5, 5}, "xavier", 0.1}, 11);

  HiddenState hidden = HiddenState::zero(net);
  StepPredictor predict = [&](int, const Vec& x) {
    ForwardResult fr = net_forward(net, x, hidden);
    hidden = fr.next;
    return fr.out;
  };
  const RolloutResult a =
      rollout_with_predictor(model, cost, grid, noise[0], model.x0, net.psi(0, 0), net.zeta.col(0), predict);
  const RolloutResult b = rollout(model, cost, net, grid, noise[0], model.x0);
  CHECK(a.x == b.x);
  CHECK(a.v == b.v);
  CHECK(a.vx == b.vx);
  CHECK(a.u == b.u);
  CHECK(a.a == b.a);
}

TEST_CASE("frozen state under zero dynamics") {
  const DynamicsModel model = scalar_model(0.0, 0.0, 0.0, 0.0, 1.0);
  const CostSpec cost = scalar_cost(1.0, 2.0, 80.0);
  const TimeGrid grid(25, 0.04);
  const auto noise = sample_noise(grid, 1, 1, 1);
  const NetworkParams net = init_params({1, {4}, "xavier", 0.1}, 2);
  const RolloutResult r = rollout(model, cost, net, grid, noise[0], model.x0);
  for (int t = 0; t <= 25; ++t) CHECK(r.x(t, 0) == 1.0);
}

TEST_CASE("path failures carry the step index") {
  const DynamicsModel model = scalar_model(1e308, 0.0, 0.0, 0.0, 1.0);
  const CostSpec cost = scalar_cost(0.0, 1.0, 1.0);
  const TimeGrid grid(5, 0.5);
  const auto noise = sample_noise(grid, 1, 1, 1);
  try {
    rollout_with_predictor(model, cost, grid, noise[0], model.x0, 0.0, v1(0.0),
                           constant_predictor(0.0, 0.0));
    FAIL("expected a path failure");
  } catch (const PathFailureError& e) {
    CHECK(e.step >= 0);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("rollout validates noise and initial condition shapes") {
  const DynamicsModel model = scalar_model(0.1, 1.0, 0.1, 0.0, 1.0);
  const CostSpec cost = scalar_cost(0.0, 1.0, 1.0);
  const TimeGrid grid(4, 0.25);
  NoisePath bad;
  bad.dv = Vec::Zero(3);
  bad.dw = Mat::Zero(4, 1);
  CHECK_THROWS_AS(rollout_with_predictor(model, cost, grid, bad, model.x0, 0.0, v1(0.0),
                                         constant_predictor(1.0, 0.0)),
                  ConfigError);
  NoisePath ok;
  ok.dv = Vec::Zero(4);
  ok.dw = Mat::Zero(4, 1);
  CHECK_THROWS_AS(rollout_with_predictor(model, cost, grid, ok, Vec::Zero(2), 0.0, v1(0.0),
                                         constant_predictor(1.0, 0.0)),
                  ConfigError);
}

TEST_CASE("weak accuracy on an uncontrolled linear SDE") {
  // dx = a x dt + c dw with B = 0: compare against the exact moments of the
  // discrete recursion x' = (1 + a dt) x + c dw.
  const double a = 0.2, c = 0.1, dt = 0.02;
  const int N = 50, batch = 20000;
  const DynamicsModel model = scalar_model(a, 0.0, c, 0.0, 1.0);
  const TimeGrid grid(N, dt);
  const auto noise = sample_noise(grid, 1, batch, 31415);

  double sum = 0.0, sum_sq = 0.0;
  for (const auto& path : noise) {
    double x = 1.0;
    for (int k = 0; k < N; ++k) {
      x = fsde_step(v1(x), v1(a * x), m1(0.0), v1(0.0), 0.0, m1(c), path.dv(k), path.dw.row(k).transpose(),
                    dt)(0);
    }
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / batch;
  const double var = (sum_sq - batch * mean * mean) / (batch - 1);

  const double growth = 1.0 + a * dt;
  const double mean_exact = std::pow(growth, N);
  double var_exact = 0.0;
  for (int k = 0; k < N; ++k) var_exact = growth * growth * var_exact + c * c * dt;

  const double se_mean = std::sqrt(var / batch);
  CHECK(std::abs(mean - mean_exact) <= 3.0 * se_mean);
  const double se_var = var_exact * std::sqrt(2.0 / (batch - 1.0));
  CHECK(std::abs(var - var_exact) <= 3.0 * se_var);
}

TEST_CASE("multiplicative channel variance obeys the isometry") {
  // dx = sigma B u dv with fixed u: Var[x_T] = sigma^2 B^2 u^2 T exactly,
  // E[x_T] = x0 + B u T.
  const double sigma = 0.7, B = 2.0, u = 0.5, dt = 0.01;
  const int N = 100, batch = 20000;
  const TimeGrid grid(N, dt);
  const auto noise = sample_noise(grid, 1, batch, 2718);

  double sum = 0.0, sum_sq = 0.0;
  for (const auto& path : noise) {
    double x = 0.0;
    for (int k = 0; k < N; ++k) {
      x = fsde_step(v1(x), v1(0.0), m1(B), v1(u), sigma, m1(0.0), path.dv(k),
                    path.dw.row(k).transpose(), dt)(0);
    }
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / batch;
  const double var = (sum_sq - batch * mean * mean) / (batch - 1);

  const double mean_exact = B * u * grid.horizon;
  const double var_exact = sigma * sigma * B * B * u * u * grid.horizon;
  CHECK(std::abs(mean - mean_exact) <= 3.0 * std::sqrt(var_exact / batch));
  CHECK(std::abs(var - var_exact) <= 3.0 * var_exact * std::sqrt(2.0 / (batch - 1.0)));
}
