#include "topocat/errors.hpp"
#include "topocat/model.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

using namespace topocat;

namespace {

ArrayParams chain(int n, double t1, double t2) {
  ArrayParams p;
  p.N = n;
  p.t1 = t1;
  p.t2 = t2;
  return p;
}

LinOp total_number(const CompositeSpace& s) {
  LinOp n = LinOp::zero(s);
  for (const auto& m : s.modes()) n += mode_operator(s, m, OpKind::Number);
  return n;
}

}  // namespace

TEST_CASE("parameter validation") {
  ArrayParams p;
  p.N = 0;
  CHECK_THROWS_AS(p.validate(), UsageError);
  p = ArrayParams{};
  p.kappa = -1.0;
  CHECK_THROWS_AS(p.validate(), UsageError);
  p = ArrayParams{};
  p.chi = std::nan("");
  CHECK_THROWS_AS(p.validate(), UsageError);
}

TEST_CASE("array Hamiltonian is Hermitian and conserves photon number") {
  ArrayParams p = chain(2, 0.7, 3.0);
  p.chi = 2.0;
  p.chi_c = 0.5;
  p.omega_a = 0.3;
  const auto s = build_space(2, TruncationScheme({4, 4, 3, 3}));
  const LinOp h = array_hamiltonian(s, p);
  CHECK(h.hermiticity_error() < 1e-14);
  const LinOp n = total_number(s);
  CHECK((h * n - n * h).max_abs() < 1e-12);
  CHECK_THROWS_AS(array_hamiltonian(build_space(3, TruncationScheme::uniform(3, 2)), p), DimensionError);
}

TEST_CASE("one-photon block of the many-body Hamiltonian is the hopping matrix") {
  const ArrayParams p = chain(3, 0.4, 2.5);
  const auto s = build_space(3, TruncationScheme::uniform(3, 2));
  const LinOp h = array_hamiltonian(s, p);
  const Eigen::MatrixXd t = hopping_matrix(p);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      std::vector<int> oi(6, 0), oj(6, 0);
      oi[static_cast<std::size_t>(i)] = 1;
      oj[static_cast<std::size_t>(j)] = 1;
      CHECK(h.element(s.flat_index(oi), s.flat_index(oj)).real() == doctest::Approx(t(i, j)));
    }
  }
}

TEST_CASE("Kerr and cross-Kerr act diagonally on cavity 1") {
  ArrayParams p = chain(1, 0.0, 0.0);
  p.chi = 1.5;
  p.chi_c = 0.25;
  const auto s = build_space(1, TruncationScheme({5, 5}));
  const LinOp h = array_hamiltonian(s, p);
  for (std::size_t f = 0; f < s.dimension(); ++f) {
    const double a = s.occupation(f, 0), b = s.occupation(f, 1);
    CHECK(h.element(f, f).real() == doctest::Approx(1.5 * (a * (a - 1) + b * (b - 1)) + 0.25 * a * b));
  }
  CHECK(h.matrix().nonZeros() <= static_cast<Eigen::Index>(s.dimension()));
}

TEST_CASE("drive couples only the chosen edge mode") {
  ArrayParams p = chain(2, 1.0, 2.0);
  p.eps = 0.3;
  p.gamma_drive = 2.0;
  p.direction = Chirality::CCW;
  const auto s = build_space(2, TruncationScheme({3, 3, 2, 2}));
  const LinOp d = drive_hamiltonian(s, p);
  CHECK(d.hermiticity_error() < 1e-15);
  const std::vector<int> vac = {0, 0, 0, 0}, one = {0, 1, 0, 0}, other = {1, 0, 0, 0};
  CHECK(std::abs(d.element(s.flat_index(one), s.flat_index(vac)) - cplx(0.0, 2.0 * 0.3)) < 1e-14);
  CHECK(std::abs(d.element(s.flat_index(other), s.flat_index(vac))) == 0.0);
}

TEST_CASE("collapse rates") {
  ArrayParams p = chain(2, 1.0, 1.5);
  p.kappa = 1.0;
  p.gamma_drive = 0.5;
  const auto s = build_space(2, TruncationScheme::uniform(2, 2));
  const auto free = array_collapses(s, p, false);
  const auto driven = array_collapses(s, p, true);
  REQUIRE(free.size() == 4);
  REQUIRE(driven.size() == 4);
  CHECK(driven[0].rate == doctest::Approx(1.5));
  CHECK(driven[1].rate == doctest::Approx(1.5));
  CHECK(driven[2].rate == doctest::Approx(1.0));
  CHECK(free[0].rate == doctest::Approx(1.0));
}

TEST_CASE("Bloch Hamiltonian spectrum is +-|t1 + t2 e^{ik}|") {
  const ArrayParams p = chain(1, 0.6, 1.7);
  for (double k : {-3.0, -1.0, 0.0, 0.4, 2.9}) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es(bloch_hamiltonian(k, p));
    const double mag = std::abs(p.t1 + p.t2 * std::exp(cplx(0.0, k)));
    CHECK(es.eigenvalues()(0) == doctest::Approx(-mag));
    CHECK(es.eigenvalues()(1) == doctest::Approx(mag));
  }
}

TEST_CASE("winding number") {
  CHECK(winding_number(chain(1, 0.3, 1.0)) == 1);
  CHECK(winding_number(chain(1, 1.8, 1.0)) == 0);
  CHECK(winding_number(chain(1, 0.0, 1.0)) == 1);
  CHECK_THROWS_AS(winding_number(chain(1, 1.0, 1.0)), GapClosingError);
  CHECK_THROWS_AS(winding_number(chain(1, 0.0, 0.0)), GapClosingError);
  // Coarse grids still resolve the winding away from the transition.
  CHECK(winding_number(chain(1, 0.5, 1.0), 16) == 1);
}

TEST_CASE("open-chain spectrum is chiral symmetric") {
  const auto s = single_excitation_spectrum(chain(7, 0.3, 1.0));
  const auto n = s.eigenvalues.size();
  for (Eigen::Index i = 0; i < n; ++i) CHECK(s.eigenvalues(i) == doctest::Approx(-s.eigenvalues(n - 1 - i)));
}

TEST_CASE("edge profile follows the semi-infinite zero mode") {
  const double r = 0.3;
  const auto prof = edge_profile(chain(20, r, 1.0));
  double total = 0.0;
  for (double x : prof.occupation) total += x;
  CHECK(total == doctest::Approx(1.0));
  for (int j = 1; j <= 4; ++j) {
    const double expect_cw = (1.0 - r * r) * std::pow(r, 2.0 * (j - 1));
    CHECK(prof.at({j, Chirality::CW}) == doctest::Approx(expect_cw).epsilon(1e-6));
    CHECK(prof.at({j, Chirality::CCW}) < 1e-12);
  }
  CHECK(std::abs(prof.energy) < 1e-9);
}

TEST_CASE("trivial chain has no mid-gap mode") {
  const auto s = single_excitation_spectrum(chain(20, 2.0, 1.0));
  CHECK(s.eigenvalues.cwiseAbs().minCoeff() > 0.9);
}
