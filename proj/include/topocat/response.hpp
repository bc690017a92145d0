#pragma once

#include "topocat/fockspace.hpp"
#include "topocat/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace topocat {

// Linear QLE  da/dt = -M a + u  for the 2N edge-driven array (chi = 0).
struct QleMatrix {
  CMatrix M;
  CVector u;
  double delta_p = 0.0;
  Chirality direction = Chirality::CW;
};

QleMatrix qle_matrix(const ArrayParams& p, double delta_p);

// Steady amplitudes a = M^{-1} u.
CVector steady_amplitudes(const QleMatrix& q);

// t = 1 - (sqrt(2 gamma)/eps) a_{1,dir}; T = |t|^2.
cplx numeric_reflection(const ArrayParams& p, double delta_p, Chirality direction);
double numeric_transmission(const ArrayParams& p, double delta_p, Chirality direction);

struct GreenValue {
  cplx value;               // [D^{-1}]_11 of the semi-infinite bulk
  double contraction = 0;   // |f'(x)| of the fixed-point map at the chosen root
  bool branch_flag = false; // both roots marginal: branch point
};

// Root of t2^2 s x^2 + (s^2 + t1^2 - t2^2) x - s = 0, s = kappa + i delta_p,
// that is the attracting fixed point of x -> 1/(s + t1^2/(s + t2^2 x)).
GreenValue analytic_green(const ArrayParams& p, double delta_p);
// Same quantity from `depth` levels of the continued fraction.
cplx continued_fraction_green(const ArrayParams& p, double delta_p, int depth = 4000);

struct AnalyticReflection {
  cplx t;
  double T = 0.0;
  bool branch_flag = false;
};

// Closed forms for gamma = kappa (UsageError otherwise). The CCW expression
// carries the corrected (Delta_p - 2 i kappa) factor; see README.
AnalyticReflection analytic_transmission(const ArrayParams& p, double delta_p, Chirality direction);
// Literal printed CCW form with the real (Delta_p - 2 kappa) factor, kept for comparison.
AnalyticReflection printed_transmission(const ArrayParams& p, double delta_p, Chirality direction);

struct TransmissionCurve {
  std::vector<double> delta_p;
  std::vector<double> T_cw;
  std::vector<double> T_ccw;
  std::string source;  // "numeric" or "analytic"
};

TransmissionCurve transmission_curve(const ArrayParams& p, std::span<const double> delta_p_grid,
                                     const std::string& source);

}  // namespace topocat
