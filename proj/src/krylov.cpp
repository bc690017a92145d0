#include "topocat/krylov.hpp"

#include "topocat/errors.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace topocat {

KrylovSubspace::KrylovSubspace(const Apply& apply, const CVector& v, int max_dim) {
  if (max_dim < 1) throw UsageError("Krylov dimension must be >= 1");
  const Eigen::Index n = v.size();
  const Eigen::Index m = std::min<Eigen::Index>(max_dim, n);
  beta_ = v.norm();
  basis_.resize(n, m);
  CMatrix h = CMatrix::Zero(m + 1, m);
  if (beta_ == 0.0) {
    basis_.resize(n, 1);
    basis_.col(0).setZero();
    hess_ = CMatrix::Zero(1, 1);
    invariant_ = true;
    return;
  }
  basis_.col(0) = v / beta_;
  CVector w(n);
  Eigen::Index built = m;
  for (Eigen::Index j = 0; j < m; ++j) {
    apply(basis_.col(j), w);
    // Modified Gram-Schmidt, applied twice for stability.
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i <= j; ++i) {
        const cplx c = basis_.col(i).dot(w);
        h(i, j) += c;
        w.noalias() -= c * basis_.col(i);
      }
    }
    const double wn = w.norm();
    h(j + 1, j) = wn;
    if (wn <= 1e-13 * h.col(j).norm() || wn == 0.0) {
      built = j + 1;
      invariant_ = true;
      break;
    }
    if (j + 1 < m) basis_.col(j + 1) = w / wn;
  }
  basis_.conservativeResize(n, built);
  hess_ = h.topLeftCorner(built, built);
  next_ = invariant_ ? 0.0 : std::abs(h(built, built - 1));
}

CVector KrylovSubspace::small_exp(cplx tau) const {
  const CMatrix e = (tau * hess_).exp();
  return e.col(0);
}

CVector KrylovSubspace::propagate(cplx tau) const {
  if (beta_ == 0.0) return CVector::Zero(basis_.rows());
  return beta_ * (basis_ * small_exp(tau));
}

double KrylovSubspace::propagated_norm(cplx tau) const {
  if (beta_ == 0.0) return 0.0;
  return beta_ * small_exp(tau).norm();
}

double KrylovSubspace::error_estimate(cplx tau) const {
  if (invariant_ || beta_ == 0.0) return 0.0;
  const CVector e = small_exp(tau);
  return beta_ * next_ * std::abs(e(e.size() - 1));
}

}  // namespace topocat
