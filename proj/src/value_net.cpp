#include "fbsde/value_net.hpp"

#include <cmath>

#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"

namespace fbsde {

namespace {

Vec sigmoid_of(const Vec& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

Vec lstm_cell(const LstmLayerParams& p, const Vec& in, Vec& h, Vec& c) {
  const int hs = static_cast<int>(p.w_h.cols());
  const Vec z = p.w_x * in + p.w_h * h + p.b.col(0);
  const Vec i = sigmoid_of(z.segment(0, hs));
  const Vec f = sigmoid_of(z.segment(hs, hs));
  const Vec g = z.segment(2 * hs, hs).array().tanh().matrix();
  const Vec o = sigmoid_of(z.segment(3 * hs, hs));
  c = f.cwiseProduct(c) + i.cwiseProduct(g);
  h = o.cwiseProduct(c.array().tanh().matrix());
  return h;
}

void xavier_fill(Mat& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-limit, limit);
  }
}

}  // namespace

std::size_t NetworkParams::count() const {
  std::size_t n = 0;
  for (const NamedArray& a : named_arrays(*this)) n += static_cast<std::size_t>(a.mat->size());
  return n;
}

std::vector<NamedArray> named_arrays(NetworkParams& p) {
  std::vector<NamedArray> out;
  for (std::size_t l = 0; l < p.lstm.size(); ++l) {
    const std::string prefix = "lstm" + std::to_string(l);
    out.push_back({prefix + ".w_x", &p.lstm[l].w_x});
    out.push_back({prefix + ".w_h", &p.lstm[l].w_h});
    out.push_back({prefix + ".b", &p.lstm[l].b});
  }
  out.push_back({"head_vxx.w", &p.head_vxx_w});
  out.push_back({"head_vxx.b", &p.head_vxx_b});
  out.push_back({"head_a.w", &p.head_a_w});
  out.push_back({"head_a.b", &p.head_a_b});
  out.push_back({"psi", &p.psi});
  out.push_back({"zeta", &p.zeta});
  return out;
}

std::vector<NamedArray> named_arrays(const NetworkParams& p) {
  return named_arrays(const_cast<NetworkParams&>(p));
}

HiddenState HiddenState::zero(const NetworkParams& p) {
  HiddenState s;
  for (int h : p.hidden) {
    s.h.push_back(Vec::Zero(h));
    s.c.push_back(Vec::Zero(h));
  }
  return s;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.n_x < 1) throw ConfigError("network: state dimension must be >= 1");
  if (spec.hidden.empty()) throw ConfigError("network: at least one LSTM layer required");
  for (int h : spec.hidden) {
    if (h < 1) throw ConfigError("network: hidden widths must be >= 1");
  }
  if (spec.init != "xavier" && spec.init != "zeros") {
    throw ConfigError("network: init must be 'xavier' or 'zeros', got '" + spec.init + "'");
  }
  if (!(spec.psi_zeta_std >= 0.0)) throw ConfigError("network: psi_zeta_std must be >= 0");

  NetworkParams p;
  p.n_x = spec.n_x;
  p.hidden = spec.hidden;
  Rng rng(seed);

  int in = spec.n_x;
  for (int h : spec.hidden) {
    LstmLayerParams layer;
    layer.w_x = Mat::Zero(4 * h, in);
    layer.w_h = Mat::Zero(4 * h, h);
    layer.b = Mat::Zero(4 * h, 1);
    if (spec.init == "xavier") {
      xavier_fill(layer.w_x, rng);
      xavier_fill(layer.w_h, rng);
    }
    p.lstm.push_back(std::move(layer));
    in = h;
  }
  const int h_last = spec.hidden.back();
  p.head_vxx_w = Mat::Zero(p.packed_dim(), h_last);
  p.head_vxx_b = Mat::Zero(p.packed_dim(), 1);
  p.head_a_w = Mat::Zero(spec.n_x, h_last);
  p.head_a_b = Mat::Zero(spec.n_x, 1);
  if (spec.init == "xavier") {
    xavier_fill(p.head_vxx_w, rng);
    xavier_fill(p.head_a_w, rng);
  }
  p.psi = Mat::Zero(1, 1);
  p.zeta = Mat::Zero(spec.n_x, 1);
  // psi/zeta get their own stream so the draw is identical for every init
  // branch at a given seed, no matter how many values the weights consumed.
  Rng head(mix_key({seed, kDomainMisc}));
  p.psi(0, 0) = spec.psi_zeta_std * head.normal();
  for (int i = 0; i < spec.n_x; ++i) p.zeta(i, 0) = spec.psi_zeta_std * head.normal();
  return p;
}

ForwardResult net_forward(const NetworkParams& p, const Vec& x, const HiddenState& hidden) {
  if (x.size() != p.n_x) throw ConfigError("net_forward: input dimension mismatch");
  ForwardResult r;
  r.next = hidden;
  Vec in = x;
  for (std::size_t l = 0; l < p.lstm.size(); ++l) {
    in = lstm_cell(p.lstm[l], in, r.next.h[l], r.next.c[l]);
  }
  const Vec packed = p.head_vxx_w * in + p.head_vxx_b.col(0);
  r.out.vxx = sym_from_packed(packed, p.n_x);
  r.out.a = p.head_a_w * in + p.head_a_b.col(0);
  return r;
}

int packed_index(int i, int j) {
  if (j > i) std::swap(i, j);
  return i * (i + 1) / 2 + j;
}

Mat sym_from_packed(const Vec& packed, int n) {
  Mat m(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      m(i, j) = packed(k);
      m(j, i) = packed(k);
    }
  }
  return m;
}

Vec optimal_control(const Vec& vx, const Mat& vxx, const Mat& G, const Mat& R, double sigma) {
  const SpdFactor f = factor_spd_with_jitter(make_rhat(R, G, vxx, sigma));
  return -f.solve(Vec(G.transpose() * vx));
}

AdNetParams register_net_params(ad::Tape& t, const NetworkParams& p) {
  AdNetParams ap;
  int key = 0;
  for (const LstmLayerParams& layer : p.lstm) {
    AdNetParams::Layer al;
    al.w_x = t.param(layer.w_x, key++);
    al.w_h = t.param(layer.w_h, key++);
    al.b = t.param(layer.b, key++);
    ap.lstm.push_back(al);
  }
  ap.head_vxx_w = t.param(p.head_vxx_w, key++);
  ap.head_vxx_b = t.param(p.head_vxx_b, key++);
  ap.head_a_w = t.param(p.head_a_w, key++);
  ap.head_a_b = t.param(p.head_a_b, key++);
  ap.psi = t.param(p.psi, key++);
  ap.zeta = t.param(p.zeta, key++);
  return ap;
}

AdHidden ad_zero_hidden(ad::Tape& t, const NetworkParams& p) {
  AdHidden s;
  for (int h : p.hidden) {
    s.h.push_back(t.constant(Mat::Zero(h, 1)));
    s.c.push_back(t.constant(Mat::Zero(h, 1)));
  }
  return s;
}

AdNetOutput net_forward_ad(ad::Tape& t, const AdNetParams& ap, const NetworkParams& shape, ad::Var x,
                           AdHidden& hidden) {
  ad::Var in = x;
  for (std::size_t l = 0; l < ap.lstm.size(); ++l) {
    const int hs = shape.hidden[l];
    ad::Var z = t.add(t.add(t.matmul(ap.lstm[l].w_x, in), t.matmul(ap.lstm[l].w_h, hidden.h[l])),
                      ap.lstm[l].b);
    ad::Var ig = t.sigmoid(t.segment(z, 0, hs));
    ad::Var fg = t.sigmoid(t.segment(z, hs, hs));
    ad::Var gg = t.tanh(t.segment(z, 2 * hs, hs));
    ad::Var og = t.sigmoid(t.segment(z, 3 * hs, hs));
    hidden.c[l] = t.add(t.cwise_mul(fg, hidden.c[l]), t.cwise_mul(ig, gg));
    hidden.h[l] = t.cwise_mul(og, t.tanh(hidden.c[l]));
    in = hidden.h[l];
  }
  AdNetOutput out;
  out.vxx = t.sym_from_packed(t.add(t.matmul(ap.head_vxx_w, in), ap.head_vxx_b), shape.n_x);
  out.a = t.add(t.matmul(ap.head_a_w, in), ap.head_a_b);
  return out;
}

}  // namespace fbsde
