#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fbsde/linalg.hpp"
#include "fbsde/tape.hpp"

// Recurrent value-function network: a stack of LSTM layers applied along the
// rollout, with two linear heads producing the packed Hessian prediction Vxx
// and the gradient drift correction A at each time step. The scalar psi and
// vector zeta are trainable estimates of V and V_x at (t=0, x0).

namespace fbsde {

struct NetworkSpec {
  int n_x = 0;
  std::vector<int> hidden;      // LSTM layer widths
  std::string init = "xavier";  // "xavier" or "zeros" (weights); psi/zeta always Gaussian
  double psi_zeta_std = 0.1;
};

// All arrays stored as matrices (vectors are n x 1) so checkpointing and the
// optimizer can treat parameters uniformly. LSTM gate rows are packed in the
// order [input, forget, candidate, output].
struct LstmLayerParams {
  Mat w_x;  // 4h x in
  Mat w_h;  // 4h x h
  Mat b;    // 4h x 1
};

struct NetworkParams {
  int n_x = 0;
  std::vector<int> hidden;
  std::vector<LstmLayerParams> lstm;
  Mat head_vxx_w;  // n_x(n_x+1)/2 x h_last
  Mat head_vxx_b;
  Mat head_a_w;  // n_x x h_last
  Mat head_a_b;
  Mat psi;   // 1 x 1
  Mat zeta;  // n_x x 1

  int packed_dim() const { return n_x * (n_x + 1) / 2; }
  std::size_t count() const;
};

// Named views over every parameter array, in checkpoint order. psi and zeta
// are always the last two entries; they are excluded from L2 regularization.
struct NamedArray {
  std::string name;
  Mat* mat;
};
std::vector<NamedArray> named_arrays(NetworkParams& p);
std::vector<NamedArray> named_arrays(const NetworkParams& p);  // const-cast views for read paths

struct HiddenState {
  std::vector<Vec> h;
  std::vector<Vec> c;
  static HiddenState zero(const NetworkParams& p);
};

struct NetworkOutput {
  Mat vxx;  // n_x x n_x, symmetric by construction
  Vec a;    // n_x
};

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);

struct ForwardResult {
  NetworkOutput out;
  HiddenState next;
};
ForwardResult net_forward(const NetworkParams& p, const Vec& x, const HiddenState& hidden);

// Row-wise lower-triangle packing: (i, j), i >= j lives at i(i+1)/2 + j.
int packed_index(int i, int j);
Mat sym_from_packed(const Vec& packed, int n);

// u* = -Rhat^-1 G'Vx with Rhat = R + sigma^2 G'Vxx G (shared jitter policy).
Vec optimal_control(const Vec& vx, const Mat& vxx, const Mat& G, const Mat& R, double sigma);

// --- tape (differentiable) twin of the forward pass -------------------------

struct AdNetParams {
  struct Layer {
    ad::Var w_x, w_h, b;
  };
  std::vector<Layer> lstm;
  ad::Var head_vxx_w, head_vxx_b, head_a_w, head_a_b, psi, zeta;
};

// Registers every parameter array as a tape leaf; keys follow named_arrays order.
AdNetParams register_net_params(ad::Tape& t, const NetworkParams& p);

struct AdHidden {
  std::vector<ad::Var> h;
  std::vector<ad::Var> c;
};
AdHidden ad_zero_hidden(ad::Tape& t, const NetworkParams& p);

struct AdNetOutput {
  ad::Var vxx;
  ad::Var a;
};
AdNetOutput net_forward_ad(ad::Tape& t, const AdNetParams& ap, const NetworkParams& shape, ad::Var x,
                           AdHidden& hidden);

}  // namespace fbsde
