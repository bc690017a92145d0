#include "topocat/dynamics.hpp"
#include "topocat/errors.hpp"
#include "topocat/model.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <random>
#include <vector>

using namespace topocat;
using std::numbers::pi;

namespace {

CMatrix random_density(Eigen::Index d, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  CMatrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = cplx(g(rng), g(rng));
  }
  CMatrix rho = a * a.adjoint();
  return rho / rho.trace();
}

// -i[H, rho] + sum 2 rate (c rho c^dag - 1/2 {c^dag c, rho}) with dense algebra.
CMatrix reference_lindblad(const LinOp& h, std::span<const Collapse> cs, const CMatrix& rho) {
  const CMatrix hd = CMatrix(h.matrix());
  CMatrix out = cplx(0, -1) * (hd * rho - rho * hd);
  for (const auto& c : cs) {
    const CMatrix cd = CMatrix(c.op.matrix());
    const CMatrix cdc = cd.adjoint() * cd;
    out += 2.0 * c.rate * (cd * rho * cd.adjoint() - 0.5 * (cdc * rho + rho * cdc));
  }
  return out;
}

struct Small {
  ArrayParams p;
  CompositeSpace space;
  LinOp h;
  std::vector<Collapse> cs;
};

Small small_array(bool driven) {
  Small s;
  s.p.N = 2;
  s.p.t1 = 0.8;
  s.p.t2 = 2.0;
  s.p.chi = 1.3;
  s.p.chi_c = 0.4;
  s.p.kappa = 0.3;
  s.p.gamma_drive = 0.5;
  s.p.eps = driven ? 0.7 : 0.0;
  s.p.delta = -0.6;
  s.space = build_space(2, TruncationScheme({4, 3, 2, 2}));
  s.h = driven ? driven_hamiltonian(s.space, s.p) : array_hamiltonian(s.space, s.p);
  s.cs = array_collapses(s.space, s.p, driven);
  return s;
}

}  // namespace

TEST_CASE("Liouvillian matches the dense Lindblad form") {
  for (bool driven : {false, true}) {
    const Small s = small_array(driven);
    const CMatrix rho = random_density(static_cast<Eigen::Index>(s.space.dimension()), 7);
    const CMatrix ref = reference_lindblad(s.h, s.cs, rho);
    const Liouvillian l(s.h, s.cs);
    CMatrix a, b;
    l.apply(rho, a);
    l.apply_hermitian(rho, b);
    CHECK((a - ref).cwiseAbs().maxCoeff() < 1e-11);
    CHECK((b - ref).cwiseAbs().maxCoeff() < 1e-11);
    CHECK(std::abs(a.trace()) < 1e-11);
    CHECK((b - b.adjoint()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((liouvillian_apply(s.h, s.cs, DensityOp{s.space, rho}) - ref).cwiseAbs().maxCoeff() < 1e-11);
  }
}

TEST_CASE("raw-matrix Liouvillian handles non-banded jumps") {
  const Small s = small_array(false);
  // A jump with two stored diagonals and one that is not a partial permutation.
  SparseOp c1 = s.cs[0].op.matrix() + s.cs[2].op.matrix();
  SparseOp c2 = s.cs[1].op.matrix() * SparseOp(s.cs[3].op.matrix().adjoint());
  c2 += s.cs[1].op.matrix();
  const std::vector<std::pair<SparseOp, double>> jumps = {{c1, 0.4}, {c2, 0.2}};
  const Liouvillian l(s.h.matrix(), jumps);
  const std::vector<Collapse> cs = {{LinOp(s.space, c1), 0.4}, {LinOp(s.space, c2), 0.2}};
  const CMatrix rho = random_density(static_cast<Eigen::Index>(s.space.dimension()), 11);
  CMatrix out;
  l.apply_hermitian(rho, out);
  CHECK((out - reference_lindblad(s.h, cs, rho)).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("damped coherent state decays at twice the field rate") {
  ArrayParams p;
  p.N = 1;
  p.t1 = 0.0;
  p.kappa = 0.5;
  const auto space = build_space(1, TruncationScheme({20, 2}));
  const ModeId m{1, Chirality::CW};
  const auto h = array_hamiltonian(space, p);
  const auto cs = array_collapses(space, p, false);
  EvolveSpec spec;
  spec.t_final = 1.0;
  spec.record_stride = 0.25;
  const std::vector<Observable> obs = {{"n", mode_operator(space, m, OpKind::Number)},
                                       {"x", mode_operator(space, m, OpKind::Annihilate)}};
  const cplx alpha = 1.5;
  const auto tr = evolve(coherent_ket(space, m, alpha), h, cs, spec, obs);
  REQUIRE(tr.times.size() == 5);
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const double t = tr.times[k];
    CHECK(tr.series("n")[k] == doctest::Approx(std::norm(alpha) * std::exp(-2.0 * p.kappa * t)).epsilon(1e-6));
    CHECK(tr.series("x")[k] == doctest::Approx(alpha.real() * std::exp(-p.kappa * t)).epsilon(1e-6));
  }
  CHECK(tr.invariants.holds());
  CHECK_THROWS_AS(tr.series("missing"), IndexError);
}

TEST_CASE("closed Kerr evolution reproduces the single-mode oracle") {
  ArrayParams p;
  p.N = 1;
  p.t1 = 0.0;
  p.chi = 2.0;
  p.kappa = 0.0;
  const int cutoff = 24;
  const auto space = build_space(1, TruncationScheme({cutoff, 1}));
  const ModeId m{1, Chirality::CW};
  EvolveSpec spec;
  spec.t_final = (pi / 3) / p.chi;
  spec.rtol = 1e-10;
  spec.atol = 1e-12;
  spec.reduced_modes = {m};
  const auto tr = evolve(coherent_ket(space, m, 1.5), array_hamiltonian(space, p), {}, spec);
  const Ket oracle = kerr_oracle(1.5, p.chi, spec.t_final, cutoff);
  const DensityOp& rho = tr.reduced.at(m).back();
  const cplx f = oracle.amplitudes.dot(rho.matrix * oracle.amplitudes);
  CHECK(f.real() == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("Kerr phases at a quarter revival form the two-component cat") {
  const double alpha = 1.7;
  const Ket k = kerr_oracle(alpha, 1.0, pi / 2, 30);
  // e^{-i pi n(n-1)/2} cycles through +1, +1, -1, -1.
  const CVector coh = coherent_amplitudes(alpha, 30);
  CVector expect = coh;
  for (int n = 0; n < 30; ++n) expect(n) *= (n % 4 < 2) ? 1.0 : -1.0;
  expect.normalize();
  CHECK(std::norm(expect.dot(k.amplitudes)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(overlap_fidelity(k, analytic_cat(CatKind::TwoComponent, alpha, 30)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(overlap_fidelity(kerr_oracle(alpha, 1.0, pi / 3, 30), analytic_cat(CatKind::ThreeComponent, alpha, 30)) ==
        doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("photon cap is exact when the dynamics never exceeds it") {
  const Small s = small_array(false);
  // Two photons in total never leave the sector N <= 2.
  const std::vector<int> occ = {1, 0, 1, 0};
  const Ket psi = fock_ket(s.space, occ);
  EvolveSpec spec;
  spec.t_final = 0.7;
  spec.record_stride = 0.35;
  spec.reduced_modes = {{1, Chirality::CW}, {2, Chirality::CCW}};
  const std::vector<Observable> obs = {{"n1", mode_operator(s.space, {1, Chirality::CCW}, OpKind::Number)}};
  const auto full = evolve(psi, s.h, s.cs, spec, obs);
  spec.max_total_photons = 2;
  const auto capped = evolve(psi, s.h, s.cs, spec, obs);
  REQUIRE(full.times.size() == capped.times.size());
  for (std::size_t k = 0; k < full.times.size(); ++k) {
    CHECK(capped.series("n1")[k] == doctest::Approx(full.series("n1")[k]).epsilon(1e-7));
    for (const auto& m : spec.reduced_modes) {
      CHECK((capped.reduced.at(m)[k].matrix - full.reduced.at(m)[k].matrix).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
  CHECK(capped.invariants.holds());
  spec.method = EvolveMethod::Trajectories;
  CHECK_THROWS_AS(evolve(psi, s.h, s.cs, spec, obs), UsageError);
}

TEST_CASE("photon cap warns about the dropped initial tail") {
  const Small s = small_array(false);
  std::vector<std::string> seen;
  set_warning_sink([&](const std::string& w) { seen.push_back(w); });
  EvolveSpec spec;
  spec.t_final = 0.01;
  spec.max_total_photons = 1;
  const auto tr = evolve(coherent_ket(s.space, {1, Chirality::CW}, 1.0), s.h, s.cs, spec);
  set_warning_sink(nullptr);
  CHECK(!seen.empty());
  CHECK(tr.invariants.max_trace_drift < 1e-8);
}

TEST_CASE("trajectories are reproducible and independent of the worker count") {
  const Small s = small_array(true);
  EvolveSpec spec;
  spec.method = EvolveMethod::Trajectories;
  spec.t_final = 1.0;
  spec.record_stride = 0.5;
  spec.n_traj = 16;
  spec.seed = 99;
  const std::vector<Observable> obs = {{"n", mode_operator(s.space, {1, Chirality::CW}, OpKind::Number)}};
  const Ket psi = vacuum_ket(s.space);
  spec.workers = 1;
  const auto a = evolve(psi, s.h, s.cs, spec, obs);
  spec.workers = 3;
  const auto b = evolve(psi, s.h, s.cs, spec, obs);
  CHECK(a.series("n") == b.series("n"));
  CHECK(a.errors("n") == b.errors("n"));
  spec.seed = 100;
  const auto c = evolve(psi, s.h, s.cs, spec, obs);
  CHECK(c.series("n") != a.series("n"));
}

TEST_CASE("steady state of a driven lossy mode") {
  ArrayParams p;
  p.N = 1;
  p.t1 = 0.0;
  p.kappa = 1.0;
  p.gamma_drive = 0.5;
  p.eps = 0.4;
  p.delta = 0.8;
  const auto space = build_space(1, TruncationScheme({10, 1}));
  const ModeId m{1, Chirality::CW};
  const auto h = driven_hamiltonian(space, p);
  const auto cs = array_collapses(space, p, true);
  const std::vector<Observable> obs = {{"n", mode_operator(space, m, OpKind::Number)}};
  // da/dt = -(kappa + gamma + i delta) a + sqrt(2 gamma) eps
  const cplx a = std::sqrt(2.0 * p.gamma_drive) * p.eps / cplx(p.kappa + p.gamma_drive, p.delta);
  for (auto method : {SteadyMethod::Direct, SteadyMethod::Evolution}) {
    SteadyOptions opt;
    opt.method = method;
    const auto r = steady_state(h, cs, obs, opt);
    CHECK(r.observables.at("n").mean == doctest::Approx(std::norm(a)).epsilon(1e-6));
    CHECK(r.rho->trace().real() == doctest::Approx(1.0));
  }
  SteadyOptions opt;
  opt.method = SteadyMethod::Trajectories;
  opt.n_traj = 16;
  opt.average_time = 20.0;
  const auto r = steady_state(h, cs, obs, opt);
  const Estimate e = r.observables.at("n");
  CHECK(std::abs(e.mean - std::norm(a)) < 4.0 * e.std_error + 0.02);
}

TEST_CASE("steady state without dissipation is rejected") {
  ArrayParams p;
  p.N = 1;
  p.t1 = 1.0;
  const auto space = build_space(1, TruncationScheme({3, 3}));
  const auto h = array_hamiltonian(space, p);
  SteadyOptions opt;
  opt.method = SteadyMethod::Direct;
  CHECK_THROWS_AS(steady_state(h, {}, {}, opt), AmbiguityError);
  opt.method = SteadyMethod::Evolution;
  CHECK_THROWS_AS(steady_state(h, {}, {}, opt), UsageError);
}

TEST_CASE("excitation spectrum records per-point failures") {
  ArrayParams p;
  p.N = 1;
  p.t1 = 0.5;
  p.eps = 0.2;
  const auto space = build_space(1, TruncationScheme({3, 3}));
  const std::vector<double> grid = {-1.0, std::nan(""), 1.0};
  const auto pts = excitation_spectrum(space, p, Chirality::CW, grid);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].error.empty());
  CHECK(!pts[1].error.empty());
  CHECK(pts[2].n > 0.0);
  CHECK(pts[0].method == "direct");
}

TEST_CASE("dense evolution refuses dimensions above the cap") {
  const auto space = build_space(3, TruncationScheme::uniform(3, 8));
  ArrayParams p;
  p.N = 3;
  EvolveSpec spec;
  CHECK_THROWS_AS(evolve(vacuum_ket(space), array_hamiltonian(space, p), {}, spec), CapacityError);
}

TEST_CASE("worker count resolution") {
  CHECK(resolve_workers(3) == 3);
  setenv("TOPOCAT_WORKERS", "5", 1);
  CHECK(resolve_workers(0) == 5);
  unsetenv("TOPOCAT_WORKERS");
  CHECK(resolve_workers(0) >= 1);
}
