#include "topocat/response.hpp"

#include "topocat/errors.hpp"

#include <cmath>

namespace topocat {

namespace {

constexpr cplx kI{0.0, 1.0};

void require_linear(const ArrayParams& p) {
  p.validate();
  if (p.chi != 0.0 || p.chi_c != 0.0) throw UsageError("linear response needs chi = 0 and chi_c = 0");
}

// A = 2 t2^2 s x + (s^2 + t1^2 - t2^2): the square root of the discriminant
// on the branch selected by the attracting fixed point.
cplx branch_root(const ArrayParams& p, double delta_p, bool& flag) {
  const GreenValue g = analytic_green(p, delta_p);
  flag = g.branch_flag;
  const cplx s(p.kappa, delta_p);
  return 2.0 * p.t2 * p.t2 * s * g.value + (s * s + p.t1 * p.t1 - p.t2 * p.t2);
}

AnalyticReflection closed_form(const ArrayParams& p, double delta_p, Chirality direction, bool literal) {
  require_linear(p);
  if (std::abs(p.gamma_drive - p.kappa) > 1e-12 * std::max(1.0, p.kappa)) {
    throw UsageError("closed-form transmission assumes gamma_drive = kappa; use the numeric source");
  }
  AnalyticReflection r;
  const cplx a = branch_root(p, delta_p, r.branch_flag);
  const double k = p.kappa;
  const double t1s = p.t1 * p.t1, t2s = p.t2 * p.t2;
  const cplx dp(delta_p, 0.0);
  const cplx x = t2s - (dp - kI * k) * (dp - 3.0 * kI * k) + a;
  const cplx y = t2s - (dp - kI * k) * (dp + kI * k) + a;
  if (direction == Chirality::CW) {
    r.t = ((dp - 2.0 * kI * k) * t1s + dp * x) / (dp * t1s + (dp - 2.0 * kI * k) * x);
  } else {
    const cplx f = literal ? dp - 2.0 * k : dp - 2.0 * kI * k;
    r.t = (dp * t1s + f * y) / (dp * t1s + f * x);
  }
  r.T = std::norm(r.t);
  return r;
}

}  // namespace

QleMatrix qle_matrix(const ArrayParams& p, double delta_p) {
  p.validate();
  const int n = 2 * p.N;
  QleMatrix q;
  q.delta_p = delta_p;
  q.direction = p.direction;
  q.M = CMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) q.M(i, i) = cplx(p.kappa, delta_p);
  q.M(0, 0) += p.gamma_drive;
  q.M(1, 1) += p.gamma_drive;
  for (int j = 0; j < p.N; ++j) {
    q.M(2 * j, 2 * j + 1) = q.M(2 * j + 1, 2 * j) = kI * p.t1;
    if (j + 1 < p.N) q.M(2 * j + 1, 2 * j + 2) = q.M(2 * j + 2, 2 * j + 1) = kI * p.t2;
  }
  q.u = CVector::Zero(n);
  q.u(p.direction == Chirality::CW ? 0 : 1) = std::sqrt(2.0 * p.gamma_drive) * p.eps;
  return q;
}

CVector steady_amplitudes(const QleMatrix& q) {
  Eigen::FullPivLU<CMatrix> lu(q.M);
  if (!lu.isInvertible()) throw NumericalError("QLE matrix is singular (kappa = gamma = 0?)");
  return lu.solve(q.u);
}

cplx numeric_reflection(const ArrayParams& p, double delta_p, Chirality direction) {
  require_linear(p);
  if (p.gamma_drive <= 0.0) throw UsageError("transmission needs gamma_drive > 0");
  ArrayParams q = p;
  q.direction = direction;
  // The ratio a/eps does not depend on eps; use a unit probe.
  q.eps = 1.0;
  const QleMatrix m = qle_matrix(q, delta_p);
  const CVector a = steady_amplitudes(m);
  return 1.0 - std::sqrt(2.0 * q.gamma_drive) * a(direction == Chirality::CW ? 0 : 1);
}

double numeric_transmission(const ArrayParams& p, double delta_p, Chirality direction) {
  return std::norm(numeric_reflection(p, delta_p, direction));
}

GreenValue analytic_green(const ArrayParams& p, double delta_p) {
  require_linear(p);
  const cplx s(p.kappa, delta_p);
  const double t1s = p.t1 * p.t1, t2s = p.t2 * p.t2;
  GreenValue g;
  if (std::abs(s) == 0.0) throw NumericalError("Green's function undefined at kappa = delta_p = 0");
  if (t2s == 0.0) {
    g.value = s / (s * s + t1s);
    return g;
  }
  const cplx a = t2s * s;
  const cplx b = s * s + t1s - t2s;
  const cplx disc = std::sqrt(b * b + 4.0 * a * s);
  // Numerically stable pair of roots.
  const cplx qv = -0.5 * (b + (std::real(std::conj(b) * disc) >= 0 ? disc : -disc));
  cplx roots[2];
  roots[0] = qv / a;
  roots[1] = std::abs(qv) > 0 ? -s / qv : -b / a - roots[0];
  double contraction[2];
  for (int i = 0; i < 2; ++i) {
    const cplx u = s + t2s * roots[i];
    contraction[i] = std::abs(t1s * t2s * roots[i] * roots[i] / (u * u));
  }
  const int pick = contraction[0] <= contraction[1] ? 0 : 1;
  g.value = roots[pick];
  g.contraction = contraction[pick];
  g.branch_flag = std::abs(contraction[0] - contraction[1]) < 1e-9 || contraction[pick] >= 1.0;
  return g;
}

cplx continued_fraction_green(const ArrayParams& p, double delta_p, int depth) {
  require_linear(p);
  if (depth < 1) throw UsageError("continued-fraction depth must be >= 1");
  const cplx s(p.kappa, delta_p);
  const double t1s = p.t1 * p.t1, t2s = p.t2 * p.t2;
  // Innermost cavity of a finite chain, then add cells outward.
  cplx x = s / (s * s + t1s);
  for (int k = 1; k < depth; ++k) x = 1.0 / (s + t1s / (s + t2s * x));
  return x;
}

AnalyticReflection analytic_transmission(const ArrayParams& p, double delta_p, Chirality direction) {
  return closed_form(p, delta_p, direction, false);
}

AnalyticReflection printed_transmission(const ArrayParams& p, double delta_p, Chirality direction) {
  return closed_form(p, delta_p, direction, true);
}

TransmissionCurve transmission_curve(const ArrayParams& p, std::span<const double> delta_p_grid,
                                     const std::string& source) {
  if (source != "numeric" && source != "analytic") throw UsageError("transmission source must be numeric or analytic");
  TransmissionCurve c;
  c.source = source;
  for (const double dp : delta_p_grid) {
    c.delta_p.push_back(dp);
    if (source == "numeric") {
      c.T_cw.push_back(numeric_transmission(p, dp, Chirality::CW));
      c.T_ccw.push_back(numeric_transmission(p, dp, Chirality::CCW));
    } else {
      c.T_cw.push_back(analytic_transmission(p, dp, Chirality::CW).T);
      c.T_ccw.push_back(analytic_transmission(p, dp, Chirality::CCW).T);
    }
  }
  return c;
}

}  // namespace topocat
