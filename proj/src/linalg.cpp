#include "fbsde/linalg.hpp"

#include <algorithm>
#include <sstream>

namespace fbsde {

SpdFactor factor_spd_with_jitter(const Mat& a) {
  SpdFactor f;
  f.a = 0.5 * (a + a.transpose());
  const int n = static_cast<int>(f.a.rows());

  Eigen::SelfAdjointEigenSolver<Mat> eig(f.a, Eigen::EigenvaluesOnly);
  double lmin = eig.eigenvalues().minCoeff();
  if (lmin <= 1e-8) {
    const double eps = 1e-6 * std::max(1.0, f.a.trace() / static_cast<double>(n));
    f.a.diagonal().array() += eps;
    f.jitter = eps;
    lmin += eps;
  }
  if (lmin <= 0.0) {
    std::ostringstream msg;
    msg << "control-cost matrix is singular: lambda_min = " << lmin << " after jitter " << f.jitter;
    throw SingularControlError(msg.str());
  }

  f.llt.compute(f.a);
  if (f.llt.info() != Eigen::Success) {
    throw SingularControlError("Cholesky factorization of the control-cost matrix failed");
  }
  return f;
}

}  // namespace fbsde
