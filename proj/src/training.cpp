#include "fbsde/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>

#include "fbsde/errors.hpp"
#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

bool is_regularized(const std::string& name) { return name != "psi" && name != "zeta"; }

// Differentiable mirror of rollout(): identical formulas, built on the tape.
ad::Var build_sample_loss(ad::Tape& t, const DynamicsModel& model, const CostSpec& cost,
                          const TimeGrid& grid, const NetworkParams& params, const AdNetParams& ap,
                          const LossWeights& w, const NoisePath& noise) {
  const int N = grid.n_steps;
  const double sig = model.sigma;
  const ad::Var c_q = t.constant(cost.Q);
  const ad::Var c_qt = t.constant(cost.Q_T);
  const ad::Var c_r = t.constant(cost.R);
  const ad::Var c_eta = t.constant(Mat(cost.eta));

  ad::Var x = t.constant(Mat(model.x0));
  ad::Var v = ap.psi;
  ad::Var vx = ap.zeta;
  AdHidden hidden = ad_zero_hidden(t, params);

  for (int k = 0; k < N; ++k) {
    const double time = grid.time(k);
    const AdNetOutput net = net_forward_ad(t, ap, params, x, hidden);
    const ad::Var f = model.drift_ad(t, time, x);
    const ad::Var G = model.actuation_ad(t, time, x);
    const Mat sig_dw = model.diffusion(time, t.val(x)) * noise.dw.row(k).transpose();
    const ad::Var sdw = t.constant(sig_dw);
    const double dv = noise.dv(k);

    const ad::Var g_t = t.transpose(G);
    const ad::Var gvg = t.matmul(t.matmul(g_t, net.vxx), G);
    const ad::Var rhat = t.add(c_r, t.scale(gvg, sig * sig));
    const ad::Var m = t.solve_spd(rhat, t.matmul(g_t, vx));
    const ad::Var u = t.neg(m);
    const ad::Var gu = t.matmul(G, t.scale(u, grid.dt + sig * dv));

    const ad::Var x1 = t.add(t.add(t.add(x, t.scale(f, grid.dt)), gu), sdw);
    if (!t.val(x1).allFinite()) throw PathFailureError("training rollout: non-finite state", k);

    const ad::Var d = t.sub(x, c_eta);
    const ad::Var q = t.scale(t.matmul(t.transpose(d), t.matmul(c_q, d)), 0.5);
    const ad::Var mid = t.add(c_r, t.scale(gvg, 2.0 * sig * sig));
    const ad::Var quad = t.matmul(t.transpose(m), t.matmul(mid, m));
    const ad::Var vx_t = t.transpose(vx);
    const ad::Var v1 =
        t.add(t.add(t.sub(v, t.scale(t.sub(q, t.scale(quad, 0.5)), grid.dt)), t.matmul(vx_t, gu)),
              t.matmul(vx_t, sdw));

    const ad::Var vx1 = t.add(t.add(t.add(vx, t.scale(t.add(net.a, t.matmul(net.vxx, f)), grid.dt)),
                                    t.matmul(net.vxx, gu)),
                              t.matmul(net.vxx, sdw));
    if (!t.val(v1).allFinite() || !t.val(vx1).allFinite()) {
      throw PathFailureError("training rollout: non-finite value propagation", k);
    }
    x = x1;
    v = v1;
    vx = vx1;
  }

  const AdNetOutput net_n = net_forward_ad(t, ap, params, x, hidden);
  const ad::Var d = t.sub(x, c_eta);
  const ad::Var qtd = t.matmul(c_qt, d);
  const ad::Var v_star = t.scale(t.matmul(t.transpose(d), qtd), 0.5);

  ad::Var loss = t.scale(t.squared_norm(t.sub(v_star, v)), w.c1);
  loss = t.add(loss, t.scale(t.squared_norm(t.sub(qtd, vx)), w.c2));
  loss = t.add(loss, t.scale(t.squared_norm(t.sub(c_qt, net_n.vxx)), w.c3));
  loss = t.add(loss, t.scale(t.squared_norm(v_star), w.c4));
  if (!t.val(loss).allFinite()) throw PathFailureError("training rollout: non-finite loss", N);
  return loss;
}

std::size_t tape_size_hint(const DynamicsModel& model, const NetworkParams& params,
                           const TimeGrid& grid) {
  std::size_t per_step = 40 + 20 * params.hidden.size() + static_cast<std::size_t>(4 * model.n_x);
  return 64 + per_step * static_cast<std::size_t>(grid.n_steps + 1);
}

}  // namespace

double l2_excl_psi_zeta(const NetworkParams& params) {
  double sum = 0.0;
  for (const NamedArray& a : named_arrays(params)) {
    if (is_regularized(a.name)) sum += a.mat->squaredNorm();
  }
  return sum;
}

double compute_loss(const std::vector<double>& v_n, const std::vector<Vec>& vx_n,
                    const std::vector<Mat>& vxx_n, const std::vector<Vec>& x_n, const CostSpec& cost,
                    const LossWeights& w, const NetworkParams& params) {
  const std::size_t M = v_n.size();
  if (M == 0 || vx_n.size() != M || vxx_n.size() != M || x_n.size() != M) {
    throw ConfigError("compute_loss: empty or inconsistent batch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    const Vec d = x_n[i] - cost.eta;
    const Vec qtd = cost.Q_T * d;
    const double v_star = 0.5 * d.dot(qtd);
    const double r1 = v_star - v_n[i];
    acc += w.c1 * (r1 * r1);
    acc += w.c2 * (qtd - vx_n[i]).squaredNorm();
    acc += w.c3 * (cost.terminal_hess() - vxx_n[i]).squaredNorm();
    acc += w.c4 * v_star * v_star;
  }
  return acc / static_cast<double>(M) + w.lambda * l2_excl_psi_zeta(params);
}

AdamState AdamState::zero(const NetworkParams& params) {
  AdamState st;
  for (const NamedArray& a : named_arrays(params)) {
    st.m.push_back(Mat::Zero(a.mat->rows(), a.mat->cols()));
    st.v.push_back(Mat::Zero(a.mat->rows(), a.mat->cols()));
  }
  return st;
}

void adam_step(NetworkParams& params, const GradArrays& grads, AdamState& st, double lr, double beta1,
               double beta2, double eps) {
  std::vector<NamedArray> arrays = named_arrays(params);
  if (grads.size() != arrays.size() || st.m.size() != arrays.size()) {
    throw ConfigError("adam_step: gradient/state layout mismatch");
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t j = 0; j < arrays.size(); ++j) {
    st.m[j] = beta1 * st.m[j] + (1.0 - beta1) * grads[j];
    st.v[j] = beta2 * st.v[j] + (1.0 - beta2) * grads[j].cwiseProduct(grads[j]);
    arrays[j].mat->array() -=
        lr * (st.m[j].array() / bc1) / ((st.v[j].array() / bc2).sqrt() + eps);
  }
}

double global_grad_norm(const GradArrays& grads) {
  double sq = 0.0;
  for (const Mat& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void clip_gradients(GradArrays& grads, double clip_norm) {
  if (clip_norm <= 0.0) return;
  const double norm = global_grad_norm(grads);
  if (norm > clip_norm) {
    const double s = clip_norm / norm;
    for (Mat& g : grads) g *= s;
  }
}

BatchGrad loss_and_gradients(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                             const NetworkParams& params, const LossWeights& w,
                             const std::vector<NoisePath>& noise, int threads,
                             double max_failed_fraction) {
  const int M = static_cast<int>(noise.size());
  if (M == 0) throw ConfigError("loss_and_gradients: empty batch");
  const std::vector<NamedArray> arrays = named_arrays(params);

  struct Slot {
    double loss = 0.0;
    GradArrays grads;
    bool ok = false;
    std::exception_ptr fatal;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(M));

  parallel_for(M, threads, [&](int i) {
    Slot& slot = slots[static_cast<std::size_t>(i)];
    try {
      ad::Tape tape;
      tape.reserve(tape_size_hint(model, params, grid));
      const AdNetParams ap = register_net_params(tape, params);
      const ad::Var loss = build_sample_loss(tape, model, cost, grid, params, ap, w,
                                             noise[static_cast<std::size_t>(i)]);
      tape.backward(loss);
      slot.loss = tape.val(loss)(0, 0);
      slot.grads.reserve(arrays.size());
      for (const ad::Tape::ParamLeaf& leaf : tape.params()) slot.grads.push_back(tape.grad(leaf.var));
      slot.ok = true;
      for (const Mat& g : slot.grads) {
        if (!g.allFinite()) {
          slot.ok = false;
          break;
        }
      }
    } catch (const PathFailureError&) {
      slot.ok = false;
    } catch (const SingularControlError&) {
      slot.ok = false;
    } catch (...) {
      slot.fatal = std::current_exception();
    }
  });

  for (const Slot& slot : slots) {
    if (slot.fatal) std::rethrow_exception(slot.fatal);
  }

  BatchGrad out;
  out.grads.reserve(arrays.size());
  for (const NamedArray& a : arrays) out.grads.push_back(Mat::Zero(a.mat->rows(), a.mat->cols()));

  int retained = 0;
  for (const Slot& slot : slots) {
    if (!slot.ok) {
      ++out.dropped;
      continue;
    }
    ++retained;
    out.loss += slot.loss;
    for (std::size_t j = 0; j < out.grads.size(); ++j) out.grads[j] += slot.grads[j];
  }
  if (retained == 0 ||
      static_cast<double>(out.dropped) >= max_failed_fraction * static_cast<double>(M)) {
    std::ostringstream msg;
    msg << "training batch failed: " << out.dropped << " of " << M
        << " sample paths produced non-finite value or singular control";
    throw TrainingError(msg.str());
  }

  const double inv = 1.0 / static_cast<double>(retained);
  out.loss = out.loss * inv + w.lambda * l2_excl_psi_zeta(params);
  for (std::size_t j = 0; j < out.grads.size(); ++j) {
    out.grads[j] *= inv;
    if (w.lambda != 0.0 && is_regularized(arrays[j].name)) out.grads[j] += 2.0 * w.lambda * *arrays[j].mat;
    if (!out.grads[j].allFinite()) {
      throw TrainingError("non-finite gradient for parameter array '" + arrays[j].name + "'");
    }
  }
  return out;
}

double batch_loss_plain(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                        const NetworkParams& params, const LossWeights& w,
                        const std::vector<NoisePath>& noise) {
  const int N = grid.n_steps;
  std::vector<double> v_n;
  std::vector<Vec> vx_n, x_n;
  std::vector<Mat> vxx_n;
  for (const NoisePath& path : noise) {
    const RolloutResult r = rollout(model, cost, params, grid, path, model.x0);
    v_n.push_back(r.v(N));
    vx_n.push_back(r.vx.row(N).transpose());
    vxx_n.push_back(r.vxx[static_cast<std::size_t>(N)]);
    x_n.push_back(r.x.row(N).transpose());
  }
  return compute_loss(v_n, vx_n, vxx_n, x_n, cost, w, params);
}

TrainResult train(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                  NetworkParams initial, const TrainingConfig& cfg, const TrainCallback& callback) {
  if (cfg.iterations < 1) throw ConfigError("training: iterations must be >= 1");
  if (cfg.batch < 1) throw ConfigError("training: batch must be >= 1");
  cost.validate(model.n_x, model.n_u);
  if (initial.n_x != model.n_x) throw ConfigError("training: network/state dimension mismatch");

  TrainResult res;
  res.params = std::move(initial);
  res.adam = AdamState::zero(res.params);
  res.loss_history.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int k = 0; k < cfg.iterations; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    double lr = cfg.lr;
    if (cfg.lr_decay_every > 0) {
      lr *= std::pow(cfg.lr_decay_factor, static_cast<double>(k / cfg.lr_decay_every));
    }
    const std::vector<NoisePath> noise =
        sample_noise(grid, model.n_w, cfg.batch, cfg.seed, k * cfg.batch);
    BatchGrad bg;
    try {
      bg = loss_and_gradients(model, cost, grid, res.params, cfg.weights, noise, cfg.threads,
                              cfg.max_failed_fraction);
    } catch (const TrainingError& e) {
      throw TrainingError("iteration " + std::to_string(k) + ": " + e.what());
    }
    if (bg.dropped > 0) {
      std::fprintf(stderr, "warning: iteration %d dropped %d of %d sample paths\n", k, bg.dropped,
                   cfg.batch);
    }
    clip_gradients(bg.grads, cfg.clip_norm);
    adam_step(res.params, bg.grads, res.adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    res.loss_history.push_back(bg.loss);

    if (callback) {
      TrainIterationInfo info;
      info.iteration = k;
      info.loss = bg.loss;
      info.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
      info.lr = lr;
      info.dropped = bg.dropped;
      callback(info, res.params, res.adam);
    }
  }
  return res;
}

GradCheckReport gradient_check(const DynamicsModel& model, const CostSpec& cost, const TimeGrid& grid,
                               const NetworkParams& params, const LossWeights& w,
                               const std::vector<NoisePath>& noise, double fd_step,
                               const GradCorruptHook& corrupt) {
  BatchGrad bg = loss_and_gradients(model, cost, grid, params, w, noise, 1, 1.1);
  if (corrupt) corrupt(bg.grads);

  NetworkParams probe = params;
  std::vector<NamedArray> arrays = named_arrays(probe);

  GradCheckReport report;
  for (std::size_t j = 0; j < arrays.size(); ++j) {
    GradCheckGroup group;
    group.name = arrays[j].name;
    Mat& m = *arrays[j].mat;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double saved = m(r, c);
        m(r, c) = saved + fd_step;
        const double lp = batch_loss_plain(model, cost, grid, probe, w, noise);
        m(r, c) = saved - fd_step;
        const double lm = batch_loss_plain(model, cost, grid, probe, w, noise);
        m(r, c) = saved;
        const double fd = (lp - lm) / (2.0 * fd_step);
        const double ad = bg.grads[j](r, c);
        const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
        if (rel > group.max_rel_err) group.max_rel_err = rel;
        group.max_abs_grad = std::max(group.max_abs_grad, std::abs(ad));
      }
    }
    if (group.max_rel_err > report.worst) {
      report.worst = group.max_rel_err;
      report.worst_name = group.name;
    }
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace fbsde
