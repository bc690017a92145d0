#include "topocat/model.hpp"

#include "topocat/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace topocat {

void ArrayParams::validate() const {
  if (N < 1) throw UsageError("N must be >= 1");
  if (t1 < 0 || t2 < 0) throw UsageError("couplings t1, t2 must be >= 0");
  if (kappa < 0 || gamma_drive < 0) throw UsageError("loss rates kappa, gamma must be >= 0");
  if (!std::isfinite(chi) || !std::isfinite(chi_c) || !std::isfinite(eps) || !std::isfinite(delta)) {
    throw UsageError("non-finite model parameter");
  }
}

namespace {

void check_space(const CompositeSpace& space, const ArrayParams& p) {
  p.validate();
  if (space.mode_count() != 2 * static_cast<std::size_t>(p.N) || space.cavity_count() != p.N) {
    throw DimensionError("space holds " + std::to_string(space.mode_count()) + " modes but params describe N=" +
                         std::to_string(p.N) + " cavities");
  }
}

LinOp op(const CompositeSpace& s, int cavity, Chirality c, OpKind k) {
  return mode_operator(s, ModeId{cavity, c}, k);
}

// a^dag_x a_y + a^dag_y a_x
LinOp hop(const CompositeSpace& s, ModeId x, ModeId y) {
  LinOp xy = mode_operator(s, x, OpKind::Create) * mode_operator(s, y, OpKind::Annihilate);
  return xy + xy.adjoint();
}

// a^dag a^dag a a = n (n - 1), diagonal
LinOp kerr_term(const CompositeSpace& s, ModeId m) {
  LinOp n = mode_operator(s, m, OpKind::Number);
  return n * n - n;
}

}  // namespace

LinOp onsite_hamiltonian(const CompositeSpace& space, const ArrayParams& p) {
  check_space(space, p);
  LinOp h = LinOp::zero(space);
  for (int j = 1; j <= p.N; ++j) {
    if (p.omega_a != 0.0) {
      h += p.omega_a * (op(space, j, Chirality::CW, OpKind::Number) + op(space, j, Chirality::CCW, OpKind::Number));
    }
    if (p.t1 != 0.0) h += p.t1 * hop(space, {j, Chirality::CW}, {j, Chirality::CCW});
  }
  if (p.chi != 0.0) {
    h += p.chi * (kerr_term(space, {1, Chirality::CW}) + kerr_term(space, {1, Chirality::CCW}));
  }
  return h;
}

LinOp link_hamiltonian(const CompositeSpace& space, const ArrayParams& p) {
  check_space(space, p);
  LinOp h = LinOp::zero(space);
  if (p.t2 == 0.0) return h;
  for (int j = 1; j < p.N; ++j) h += p.t2 * hop(space, {j, Chirality::CCW}, {j + 1, Chirality::CW});
  return h;
}

LinOp drive_hamiltonian(const CompositeSpace& space, const ArrayParams& p) {
  check_space(space, p);
  if (p.eps == 0.0 || p.gamma_drive == 0.0) return LinOp::zero(space);
  const LinOp a = op(space, 1, p.direction, OpKind::Annihilate);
  const LinOp ad = op(space, 1, p.direction, OpKind::Create);
  return cplx(0.0, std::sqrt(2.0 * p.gamma_drive) * p.eps) * (ad - a);
}

LinOp cross_kerr_hamiltonian(const CompositeSpace& space, const ArrayParams& p) {
  check_space(space, p);
  if (p.chi_c == 0.0) return LinOp::zero(space);
  return p.chi_c * (op(space, 1, Chirality::CW, OpKind::Number) * op(space, 1, Chirality::CCW, OpKind::Number));
}

LinOp array_hamiltonian(const CompositeSpace& space, const ArrayParams& p) {
  return onsite_hamiltonian(space, p) + link_hamiltonian(space, p) + cross_kerr_hamiltonian(space, p);
}

LinOp driven_hamiltonian(const CompositeSpace& space, const ArrayParams& p) {
  ArrayParams rot = p;
  rot.omega_a = p.delta;
  return array_hamiltonian(space, rot) + drive_hamiltonian(space, p);
}

std::vector<Collapse> array_collapses(const CompositeSpace& space, const ArrayParams& p, bool driven) {
  check_space(space, p);
  std::vector<Collapse> out;
  for (int pos = 0; pos < 2 * p.N; ++pos) {
    const ModeId m = mode_at(pos);
    double rate = p.kappa;
    if (driven && m.cavity == 1) rate += p.gamma_drive;
    if (rate > 0.0) out.push_back({mode_operator(space, m, OpKind::Annihilate), rate});
  }
  return out;
}

// ---------------------------------------------------------------------------

BlochPoint bloch_point(double k, const ArrayParams& p) {
  return BlochPoint{k, p.t1 + p.t2 * std::cos(k), p.t2 * std::sin(k)};
}

Eigen::Matrix2cd bloch_hamiltonian(double k, const ArrayParams& p) {
  const BlochPoint b = bloch_point(k, p);
  Eigen::Matrix2cd h;
  h << p.omega_a, cplx(b.dx, -b.dy), cplx(b.dx, b.dy), p.omega_a;
  return h;
}

int winding_number(const ArrayParams& p, int grid_points) {
  if (grid_points < 8) throw UsageError("winding grid needs at least 8 points");
  const double scale = std::max(p.t1, p.t2);
  if (scale == 0.0 || std::abs(p.t1 - p.t2) < 1e-12 * scale) {
    throw GapClosingError("winding number undefined: t1 = t2 closes the bulk gap");
  }
  // Accumulate principal-branch phase increments of h(k) = dx - i dy. That
  // curve circles the origin clockwise in the nontrivial phase, so the
  // count is reported with the orientation that makes it +1 there.
  double total = 0.0;
  cplx prev = bloch_point(-std::numbers::pi, p).h();
  for (int i = 1; i <= grid_points; ++i) {
    const double k = -std::numbers::pi + 2.0 * std::numbers::pi * i / grid_points;
    const cplx cur = bloch_point(k, p).h();
    total += std::arg(cur / prev);
    prev = cur;
  }
  return static_cast<int>(std::lround(-total / (2.0 * std::numbers::pi)));
}

Eigen::MatrixXd hopping_matrix(const ArrayParams& p) {
  p.validate();
  const int n = 2 * p.N;
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n) * p.omega_a;
  for (int j = 0; j < p.N; ++j) {
    h(2 * j, 2 * j + 1) = h(2 * j + 1, 2 * j) = p.t1;
    if (j + 1 < p.N) h(2 * j + 1, 2 * j + 2) = h(2 * j + 2, 2 * j + 1) = p.t2;
  }
  return h;
}

SpectrumResult single_excitation_spectrum(const ArrayParams& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hopping_matrix(p));
  if (es.info() != Eigen::Success) throw NumericalError("hopping-matrix diagonalization failed");
  return SpectrumResult{es.eigenvalues(), es.eigenvectors()};
}

EdgeProfile edge_profile(const ArrayParams& p) {
  const SpectrumResult s = single_excitation_spectrum(p);
  const Eigen::Index n = s.eigenvalues.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::abs(s.eigenvalues(a) - p.omega_a) < std::abs(s.eigenvalues(b) - p.omega_a);
  });

  // Candidates: every eigenvector as close to omega_a as the nearest one (up
  // to round-off). Exactly degenerate edge pairs come back as arbitrary
  // mixtures of left and right edge modes, so rotate within the cluster to
  // maximize the cavity-1 weight.
  const double scale = std::max({p.t1, p.t2, 1e-300});
  const double nearest = std::abs(s.eigenvalues(order[0]) - p.omega_a);
  std::vector<Eigen::Index> cluster;
  for (Eigen::Index idx : order) {
    if (std::abs(s.eigenvalues(idx) - p.omega_a) - nearest <= 1e-9 * scale) cluster.push_back(idx);
  }

  Eigen::VectorXd best;
  double energy = 0.0;
  const auto weight1 = [](const Eigen::VectorXd& v) { return v(0) * v(0) + (v.size() > 1 ? v(1) * v(1) : 0.0); };
  for (Eigen::Index c : cluster) {
    // Build the exactly degenerate subspace around eigenvalue c.
    std::vector<Eigen::Index> deg;
    for (Eigen::Index idx : cluster) {
      if (std::abs(s.eigenvalues(idx) - s.eigenvalues(c)) <= 1e-9 * scale) deg.push_back(idx);
    }
    Eigen::MatrixXd basis(n, static_cast<Eigen::Index>(deg.size()));
    for (std::size_t k = 0; k < deg.size(); ++k) basis.col(static_cast<Eigen::Index>(k)) = s.eigenvectors.col(deg[k]);
    // Maximize <v|P_1|v> over the subspace, P_1 = projector on cavity-1 modes.
    Eigen::MatrixXd top = basis.topRows(std::min<Eigen::Index>(2, n));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> proj(top.transpose() * top);
    Eigen::VectorXd v = basis * proj.eigenvectors().col(proj.eigenvectors().cols() - 1);
    v.normalize();
    if (best.size() == 0 || weight1(v) > weight1(best) + 1e-12) {
      best = v;
      energy = s.eigenvalues(c);
    }
  }

  EdgeProfile out;
  out.energy = energy;
  out.occupation.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.occupation[static_cast<std::size_t>(i)] = best(i) * best(i);
  return out;
}

}  // namespace topocat
