#pragma once

#include "topocat/fockspace.hpp"

#include <Eigen/Dense>

namespace topocat {

// Rectangular grid over alpha = x + i p.
struct PhaseGrid {
  double x_min = -5.0, x_max = 5.0;
  double p_min = -5.0, p_max = 5.0;
  int nx = 201, np = 201;

  void validate() const;
  double dx() const { return (x_max - x_min) / (nx - 1); }
  double dp() const { return (p_max - p_min) / (np - 1); }
  double x(int i) const { return x_min + i * dx(); }
  double p(int j) const { return p_min + j * dp(); }
};

struct WignerGrid {
  PhaseGrid grid;
  Eigen::MatrixXd values;  // nx x np, values(i, j) = W(x_i + i p_j)
  double trace = 1.0;      // Tr rho of the source state

  // Trapezoidal integral of W (or of any same-shaped field).
  double integral() const;
  double integrate(const Eigen::MatrixXd& field) const;
};

// W(alpha) = (2/pi) Tr[D(alpha) P D(alpha)^dag rho], P the parity; integrates to 1.
// UsageError for multi-mode input.
WignerGrid wigner(const DensityOp& rho_mode, const PhaseGrid& grid = {});
double wigner_at(const DensityOp& rho_mode, cplx alpha);

// delta = integral(|W| - W); warns when the grid misses more than 1e-3 of the mass.
double negativity(const WignerGrid& w);

// I = (pi/2) integral W (-1/4 Laplacian - 1) W by finite differences on the
// grid; warns when the stencil error estimate exceeds 1% of |I|.
double macroscopicity(const DensityOp& rho_mode, const PhaseGrid& grid = {});
double macroscopicity(const WignerGrid& w);
// Operator form Tr(rho^2 a^dag a) - Tr(rho a rho a^dag) of the same quantity.
double macroscopicity_exact(const DensityOp& rho_mode);

// N(|-eta e^{i theta}> + e^{i beta}|eta e^{i theta}>) with the untruncated
// normalization, represented with `cutoff` Fock levels.
CVector cat_amplitudes(double eta, double beta, double theta, int cutoff);

struct CatFit {
  double eta = 0.0;
  double beta = 0.0;
  double theta = 0.0;     // the fitted rotation angle
  double residual = 0.0;  // integral (W_rho - W_cat)^2 on the grid
  double objective = 0.0; // same integral over the whole plane, via Fock space
  double relative_residual = 0.0;
  bool converged = true;
  bool poor = false;  // relative residual above 5%
  int evaluations = 0;

  double size() const { return eta * eta; }
};

struct FitOptions {
  double eta_min = 1.5;
  double eta_max_seed = 3.0;  // multistart lattice covers [eta_min, eta_max_seed]
  int eta_seeds = 6;
  int theta_seeds = 8;
  int max_evaluations = 4000;
  double tolerance = 1e-12;
};

// Whole-plane objective integral (W_rho - W_cat)^2 = (Tr rho^2 - 2<cat|rho|cat> + 1)/pi.
double cat_fit_objective(const DensityOp& rho_mode, double eta, double beta, double theta);

// Multistart simplex search; theta is reported in [-pi/2, pi/2) using the
// symmetry (eta, theta, beta) ~ (eta, theta + pi, -beta).
CatFit fit_cat(const DensityOp& rho_mode, const PhaseGrid& grid = {}, const FitOptions& opt = {});

// Uhlmann fidelity Tr sqrt(sqrt(rho) sigma sqrt(rho)).
double fidelity(const DensityOp& rho, const DensityOp& sigma);
// sqrt(<psi|rho|psi>) for a normalized pure state.
double fidelity(const DensityOp& rho, const CVector& psi);
double cat_fidelity(const DensityOp& rho_mode, const CatFit& fit);

struct Rates {
  double R_k = 0.0;
  double R_F = 0.0;
};

Rates nonreciprocal_rates(double n_cw, double n_ccw, double F_cw, double F_ccw);

struct MetricSet {
  double delta = 0.0;
  double I = 0.0;
  double F = 0.0;
  double size = 0.0;
  double n = 0.0;  // <a^dag a>
  CatFit fit;
};

MetricSet compute_metrics(const DensityOp& rho_mode, const PhaseGrid& grid = {}, const FitOptions& opt = {});

}  // namespace topocat
