#pragma once

#include <Eigen/Dense>

#include "fbsde/errors.hpp"

namespace fbsde {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Cholesky factorization of a symmetric matrix with the shared
// positive-definiteness policy for Rhat = R + sigma^2 G'Vxx G:
//   - symmetrize,
//   - if lambda_min <= 1e-8 add eps*I with eps = 1e-6 * max(1, tr/n),
//   - if lambda_min is still <= 0 the control problem is singular.
struct SpdFactor {
  Mat a;              // matrix actually factored (symmetrized, jitter applied)
  double jitter = 0;  // eps added to the diagonal, 0 if none
  Eigen::LLT<Mat> llt;

  Vec solve(const Vec& b) const { return llt.solve(b); }
  Mat solve(const Mat& b) const { return llt.solve(b); }
};

SpdFactor factor_spd_with_jitter(const Mat& a);

// Rhat assembled from the second-order control-cost correction. Grouped as
// R + s*(G'Vxx G) so every Rhat consumer produces bit-identical matrices.
inline Mat make_rhat(const Mat& R, const Mat& G, const Mat& Vxx, double sigma) {
  return R + sigma * sigma * (G.transpose() * Vxx * G);
}

}  // namespace fbsde
