#include "fbsde/dynamics.hpp"

#include <cmath>
#include <sstream>

#include "fbsde/errors.hpp"

namespace fbsde {

namespace {

void check_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    std::ostringstream msg;
    msg << "dynamics parameter " << name << " must be positive and finite, got " << v;
    throw ConfigError(msg.str());
  }
}

void check_sigma(double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) {
    throw ConfigError("sigma must be finite and >= 0");
  }
}

}  // namespace

void CostSpec::validate(int n_x, int n_u) const {
  auto square = [](const Mat& m, int n, const char* name) {
    if (m.rows() != n || m.cols() != n) {
      std::ostringstream msg;
      msg << "cost matrix " << name << " must be " << n << "x" << n << ", got " << m.rows() << "x"
          << m.cols();
      throw ConfigError(msg.str());
    }
  };
  square(Q, n_x, "Q");
  square(Q_T, n_x, "Q_T");
  square(R, n_u, "R");
  if (eta.size() != n_x) throw ConfigError("cost target eta has wrong dimension");
  if (!Q.allFinite() || !R.allFinite() || !Q_T.allFinite() || !eta.allFinite()) {
    throw ConfigError("cost specification contains non-finite entries");
  }
}

DynamicsEval eval_dynamics(const DynamicsModel& model, double t, const Vec& x) {
  if (x.size() != model.n_x) throw ConfigError("eval_dynamics: state dimension mismatch");
  if (!x.allFinite()) throw PathFailureError("eval_dynamics: non-finite state");
  DynamicsEval out;
  out.f = model.drift(t, x);
  out.G = model.actuation(t, x);
  out.Sigma = model.diffusion(t, x);
  return out;
}

DynamicsModel linear_model(const Mat& A, const Mat& B, const Mat& Sigma, double sigma, const Vec& x0) {
  const int n_x = static_cast<int>(A.rows());
  if (A.cols() != n_x) throw ConfigError("linear model: A must be square");
  if (B.rows() != n_x) throw ConfigError("linear model: B row count != state dimension");
  if (Sigma.rows() != n_x) throw ConfigError("linear model: Sigma row count != state dimension");
  if (x0.size() != n_x) throw ConfigError("linear model: x0 dimension mismatch");
  check_sigma(sigma);
  if (!A.allFinite() || !B.allFinite() || !Sigma.allFinite()) {
    throw ConfigError("linear model: non-finite coefficients");
  }

  DynamicsModel m;
  m.name = "linear";
  m.n_x = n_x;
  m.n_u = static_cast<int>(B.cols());
  m.n_w = static_cast<int>(Sigma.cols());
  m.sigma = sigma;
  m.x0 = x0;
  m.is_linear = true;
  m.lin_A = A;
  m.lin_B = B;
  m.lin_Sigma = Sigma;

  m.drift = [A](double, const Vec& x) -> Vec { return A * x; };
  m.actuation = [B](double, const Vec&) -> Mat { return B; };
  m.diffusion = [Sigma](double, const Vec&) -> Mat { return Sigma; };

  m.drift_ad = [A](ad::Tape& t_, double, ad::Var x) { return t_.matmul(t_.constant(A), x); };
  m.actuation_ad = [B](ad::Tape& t_, double, ad::Var) { return t_.constant(B); };
  return m;
}

DynamicsModel cartpole_model(double m_p, double m_c, double l, double sigma, double sigma_add,
                             const Vec& x0) {
  check_positive(m_p, "m_p");
  check_positive(m_c, "m_c");
  check_positive(l, "l");
  check_sigma(sigma);
  check_sigma(sigma_add);
  if (x0.size() != 4) throw ConfigError("cartpole: x0 must have dimension 4");

  DynamicsModel m;
  m.name = "cartpole";
  m.n_x = 4;
  m.n_u = 1;
  m.n_w = 4;
  m.sigma = sigma;
  m.x0 = x0;

  Mat Sig = Mat::Zero(4, 4);
  Sig(2, 2) = sigma_add;
  Sig(3, 3) = sigma_add;

  m.drift = [m_p, m_c, l](double, const Vec& x) -> Vec {
    const double th = x(1), xd = x(2), thd = x(3);
    const double s = std::sin(th), c = std::cos(th);
    const double den = m_c + m_p * s * s;
    Vec f(4);
    f(0) = xd;
    f(1) = thd;
    f(2) = m_p * s * (l * thd * thd + kGravity * c) / den;
    f(3) = (-m_p * l * thd * thd * c * s - (m_c + m_p) * kGravity * s) / (l * den);
    return f;
  };
  m.actuation = [m_p, m_c, l](double, const Vec& x) -> Mat {
    const double s = std::sin(x(1));
    const double den = m_c + m_p * s * s;
    Mat G(4, 1);
    G << 0.0, 0.0, 1.0 / den, -1.0 / (l * den);
    return G;
  };
  m.diffusion = [Sig](double, const Vec&) -> Mat { return Sig; };

  m.drift_ad = [m_p, m_c, l](ad::Tape& t, double, ad::Var x) {
    ad::Var th = t.segment(x, 1, 1);
    ad::Var xd = t.segment(x, 2, 1);
    ad::Var thd = t.segment(x, 3, 1);
    ad::Var s = t.sin(th);
    ad::Var c = t.cos(th);
    ad::Var thd2 = t.cwise_mul(thd, thd);
    ad::Var den = t.add(t.scale(t.cwise_mul(s, s), m_p), t.scalar(m_c));
    ad::Var inv_den = t.recip(den);
    ad::Var f2 = t.cwise_mul(t.scale(t.cwise_mul(s, t.add(t.scale(thd2, l), t.scale(c, kGravity))), m_p),
                             inv_den);
    ad::Var num3 = t.add(t.scale(t.cwise_mul(thd2, t.cwise_mul(c, s)), -m_p * l),
                         t.scale(s, -(m_c + m_p) * kGravity));
    ad::Var f3 = t.scale(t.cwise_mul(num3, inv_den), 1.0 / l);
    return t.concat_rows({xd, thd, f2, f3});
  };
  m.actuation_ad = [m_p, m_c, l](ad::Tape& t, double, ad::Var x) {
    ad::Var s = t.sin(t.segment(x, 1, 1));
    ad::Var inv_den = t.recip(t.add(t.scale(t.cwise_mul(s, s), m_p), t.scalar(m_c)));
    ad::Var zero = t.scalar(0.0);
    return t.concat_rows({zero, zero, inv_den, t.scale(inv_den, -1.0 / l)});
  };
  return m;
}

Mat quad_mixer(double d) {
  Mat mix(4, 4);
  mix << 1, 1, 1, 1,
         0, -1, 0, 1,
         1, 0, -1, 0,
         d, -d, d, -d;
  return mix;
}

DynamicsModel quadcopter_model(double m_q, double ixx, double iyy, double izz, double l, double d,
                               double sigma, double sigma_add, const Vec& x0) {
  check_positive(m_q, "m");
  check_positive(ixx, "ixx");
  check_positive(iyy, "iyy");
  check_positive(izz, "izz");
  check_positive(l, "l");
  check_positive(d, "d");
  check_sigma(sigma);
  check_sigma(sigma_add);
  if (x0.size() != 12) throw ConfigError("quadcopter: x0 must have dimension 12");

  DynamicsModel m;
  m.name = "quadcopter";
  m.n_x = 12;
  m.n_u = 4;
  m.n_w = 12;
  m.sigma = sigma;
  m.x0 = x0;

  const Mat mix = quad_mixer(d);
  Mat Sig = Mat::Zero(12, 12);
  Sig.block(6, 6, 6, 6) = sigma_add * Mat::Identity(6, 6);

  m.drift = [ixx, iyy, izz](double, const Vec& x) -> Vec {
    Vec f = Vec::Zero(12);
    f.head(6) = x.segment(6, 6);
    f(8) = kGravity;
    const double phid = x(9), thd = x(10), psid = x(11);
    f(9) = (iyy - izz) / ixx * psid * thd;
    f(10) = (izz - ixx) / iyy * phid * psid;
    f(11) = (ixx - iyy) / izz * thd * phid;
    return f;
  };
  m.actuation = [m_q, ixx, iyy, izz, l, mix](double, const Vec& x) -> Mat {
    const double phi = x(3), th = x(4), psi = x(5);
    Mat Gu = Mat::Zero(12, 4);
    Gu(6, 0) = -(std::sin(phi) * std::sin(psi) + std::cos(phi) * std::cos(psi) * std::sin(th)) / m_q;
    Gu(7, 0) = -(std::cos(phi) * std::sin(psi) * std::sin(th) - std::cos(psi) * std::sin(phi)) / m_q;
    Gu(8, 0) = -std::cos(phi) * std::cos(th) / m_q;
    Gu(9, 1) = l / ixx;
    Gu(10, 2) = l / iyy;
    Gu(11, 3) = 1.0 / izz;
    return Gu * mix;
  };
  m.diffusion = [Sig](double, const Vec&) -> Mat { return Sig; };

  m.drift_ad = [ixx, iyy, izz](ad::Tape& t, double, ad::Var x) {
    ad::Var vel = t.segment(x, 6, 6);
    ad::Var phid = t.segment(x, 9, 1);
    ad::Var thd = t.segment(x, 10, 1);
    ad::Var psid = t.segment(x, 11, 1);
    ad::Var zeros2 = t.constant(ad::Mat::Zero(2, 1));
    ad::Var grav = t.scalar(kGravity);
    ad::Var gyro_phi = t.scale(t.cwise_mul(psid, thd), (iyy - izz) / ixx);
    ad::Var gyro_th = t.scale(t.cwise_mul(phid, psid), (izz - ixx) / iyy);
    ad::Var gyro_psi = t.scale(t.cwise_mul(thd, phid), (ixx - iyy) / izz);
    return t.concat_rows({vel, zeros2, grav, gyro_phi, gyro_th, gyro_psi});
  };
  m.actuation_ad = [m_q, ixx, iyy, izz, l, mix](ad::Tape& t, double, ad::Var x) {
    ad::Var phi = t.segment(x, 3, 1);
    ad::Var th = t.segment(x, 4, 1);
    ad::Var psi = t.segment(x, 5, 1);
    ad::Var sphi = t.sin(phi), cphi = t.cos(phi);
    ad::Var sth = t.sin(th), cth = t.cos(th);
    ad::Var spsi = t.sin(psi), cpsi = t.cos(psi);
    ad::Var zeros6 = t.constant(ad::Mat::Zero(6, 1));
    ad::Var zeros3 = t.constant(ad::Mat::Zero(3, 1));
    ad::Var r6 = t.scale(t.add(t.cwise_mul(sphi, spsi), t.cwise_mul(cphi, t.cwise_mul(cpsi, sth))),
                         -1.0 / m_q);
    ad::Var r7 = t.scale(t.sub(t.cwise_mul(cphi, t.cwise_mul(spsi, sth)), t.cwise_mul(cpsi, sphi)),
                         -1.0 / m_q);
    ad::Var r8 = t.scale(t.cwise_mul(cphi, cth), -1.0 / m_q);
    ad::Var thrust_col = t.concat_rows({zeros6, r6, r7, r8, zeros3});

    ad::Mat col2 = ad::Mat::Zero(12, 1);
    col2(9, 0) = l / ixx;
    ad::Mat col3 = ad::Mat::Zero(12, 1);
    col3(10, 0) = l / iyy;
    ad::Mat col4 = ad::Mat::Zero(12, 1);
    col4(11, 0) = 1.0 / izz;
    ad::Var gu = t.concat_cols({thrust_col, t.constant(col2), t.constant(col3), t.constant(col4)});
    return t.matmul(gu, t.constant(mix));
  };
  return m;
}

}  // namespace fbsde
