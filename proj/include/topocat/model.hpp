#pragma once

#include "topocat/fockspace.hpp"

#include <Eigen/Dense>

#include <vector>

namespace topocat {

// Physical constants of the Kerr-edged SSH array. Rates are in units of kappa
// unless stated otherwise; all dissipators carry the 2*rate prefactor.
struct ArrayParams {
  int N = 5;
  double omega_a = 0.0;      // bare frequency; 0 in the interaction picture
  double t1 = 0.4;           // on-site CW<->CCW backscattering
  double t2 = 8.0;           // off-site link (CCW_j <-> CW_{j+1})
  double chi = 0.0;          // self-Kerr on both cavity-1 modes
  double chi_c = 0.0;        // cross-Kerr n_{1,CW} n_{1,CCW}
  double kappa = 1.0;        // per-mode loss
  double gamma_drive = 1.0;  // drive-fiber loss on cavity 1
  double eps = 0.0;          // drive amplitude
  double delta = 0.0;        // omega_a - omega_d (rotating frame)
  double delta_p = 0.0;      // probe detuning, linear response
  cplx alpha0 = 2.0;         // initial coherent amplitude
  Chirality direction = Chirality::CW;

  // Throws UsageError on negative rates or N < 1.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Many-body Hamiltonian terms on a truncated space

LinOp onsite_hamiltonian(const CompositeSpace& space, const ArrayParams& p);
// Zero operator for N = 1.
LinOp link_hamiltonian(const CompositeSpace& space, const ArrayParams& p);
// Rotating-frame drive i sqrt(2 gamma) eps (a^dag - a) on (1, p.direction).
LinOp drive_hamiltonian(const CompositeSpace& space, const ArrayParams& p);
LinOp cross_kerr_hamiltonian(const CompositeSpace& space, const ArrayParams& p);

// H_c + H_l + H_CK with omega_a as given (set it to 0 for the interaction picture).
LinOp array_hamiltonian(const CompositeSpace& space, const ArrayParams& p);
// Rotating frame at the drive: omega_a -> delta, plus the drive term.
LinOp driven_hamiltonian(const CompositeSpace& space, const ArrayParams& p);

// Collapse operator c entering the master equation as 2*rate*D[c].
struct Collapse {
  LinOp op;
  double rate = 0.0;
};

// kappa on every mode; when driven, gamma_drive on both cavity-1 modes
// (the drive fiber couples to both circulating modes).
std::vector<Collapse> array_collapses(const CompositeSpace& space, const ArrayParams& p, bool driven);

// ---------------------------------------------------------------------------
// Single-particle (linear, chi ignored) picture

struct BlochPoint {
  double k = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  cplx h() const { return {dx, -dy}; }
};

BlochPoint bloch_point(double k, const ArrayParams& p);
// omega_a * 1 + dx sigma_x + dy sigma_y
Eigen::Matrix2cd bloch_hamiltonian(double k, const ArrayParams& p);

inline constexpr int kWindingGridPoints = 4096;

// Phase winding of h(k) = dx - i dy over the Brillouin zone. GapClosingError
// when |t1 - t2| < 1e-12 max(t1, t2).
int winding_number(const ArrayParams& p, int grid_points = kWindingGridPoints);

// 2N x 2N open-chain hopping matrix in canonical mode order.
Eigen::MatrixXd hopping_matrix(const ArrayParams& p);

struct SpectrumResult {
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // columns, canonical mode order
};

SpectrumResult single_excitation_spectrum(const ArrayParams& p);

struct EdgeProfile {
  std::vector<double> occupation;  // canonical mode order, sums to 1
  double energy = 0.0;
  double at(const ModeId& m) const { return occupation.at(static_cast<std::size_t>(canonical_position(m))); }
};

// Squared amplitudes of the eigenvector nearest omega_a; among a near-degenerate
// pair the one with more weight on cavity 1 is returned.
EdgeProfile edge_profile(const ArrayParams& p);

}  // namespace topocat
