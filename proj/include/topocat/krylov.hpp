#pragma once

#include "topocat/fockspace.hpp"

#include <functional>

namespace topocat {

// Arnoldi basis of span{v, Av, ..., A^{m-1} v} for a general complex A.
// exp(tau A) v is approximated by beta V exp(tau Hm) e1.
class KrylovSubspace {
 public:
  using Apply = std::function<void(const CVector& in, CVector& out)>;

  KrylovSubspace(const Apply& apply, const CVector& v, int max_dim);

  int dimension() const { return static_cast<int>(hess_.cols()); }
  // True when the subspace is invariant (breakdown); propagation is then exact.
  bool invariant() const { return invariant_; }

  // beta V exp(tau Hm) e1
  CVector propagate(cplx tau) const;
  // Norm of propagate(tau) without forming the large vector.
  double propagated_norm(cplx tau) const;
  // A-posteriori error estimate beta |h_{m+1,m}| |[exp(tau Hm)]_{m,1}|.
  double error_estimate(cplx tau) const;

 private:
  CVector small_exp(cplx tau) const;

  CMatrix basis_;  // n x m
  CMatrix hess_;   // m x m
  double beta_ = 0.0;
  double next_ = 0.0;  // h_{m+1,m}
  bool invariant_ = false;
};

}  // namespace topocat
