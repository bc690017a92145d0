// Acceptance gates. Each criterion prints one PASS/FAIL line; extra detail
// goes on indented lines below it.
#include "topocat/dynamics.hpp"
#include "topocat/fockspace.hpp"
#include "topocat/model.hpp"
#include "topocat/phasespace.hpp"
#include "topocat/response.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

using namespace topocat;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ArrayParams chain(int n, double t1, double t2) {
  ArrayParams p;
  p.N = n;
  p.t1 = t1;
  p.t2 = t2;
  return p;
}

DensityOp pure(const CVector& psi) {
  return DensityOp{CompositeSpace::single_mode(static_cast<int>(psi.size())), psi * psi.adjoint()};
}

// Invariant reports of every dense run made in this process.
std::vector<InvariantReport>& dense_reports() {
  static std::vector<InvariantReport> r;
  return r;
}

// ---------------------------------------------------------------------------

Outcome winding() {
  Clock c;
  Outcome o;
  o.pass = true;
  std::ostringstream os;
  for (const double r : {0.05, 0.5, 0.9, 1.1, 2.0, 3.0}) {
    const int w = winding_number(chain(20, r, 1.0));
    const int want = r < 1.0 ? 1 : 0;
    if (w != want) o.pass = false;
    os << " W(" << r << ")=" << w;
  }
  const double t = c.seconds();
  if (t >= 1.0) o.pass = false;
  o.summary = os.str() + fmt(" in %.3f s", t);
  return o;
}

int count_zero_modes(double ratio) {
  const double t2 = 1.0;
  const SpectrumResult s = single_excitation_spectrum(chain(20, ratio * t2, t2));
  int n = 0;
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) n += std::abs(s.eigenvalues(i)) < 1e-3 * t2;
  return n;
}

Outcome edge_spectrum() {
  Clock c;
  Outcome o;
  const int topo = count_zero_modes(0.05), trivial = count_zero_modes(2.0);
  const double t = c.seconds();
  o.pass = topo == 2 && trivial == 0 && t < 1.0;
  o.summary = fmt(" edge modes at 0.05: %d, at 2: %d, %.3f s", topo, trivial, t);
  return o;
}

Outcome edge_chirality() {
  Clock c;
  Outcome o;
  const double r = 0.05;
  const EdgeProfile e = edge_profile(chain(20, r, 1.0));
  const double cw = e.at({1, Chirality::CW}), ccw = e.at({1, Chirality::CCW});
  // Brute-force eigenvector against the semi-infinite zero mode (1 - r^2) r^{2(j-1)} on CW sites.
  double dev = 0.0;
  for (int j = 1; j <= 20; ++j) {
    dev = std::max(dev, std::abs(e.at({j, Chirality::CW}) - (1 - r * r) * std::pow(r, 2.0 * (j - 1))));
  }
  const double t = c.seconds();
  o.pass = cw >= 0.99 && ccw <= 1e-3 && dev < 1e-6 && t < 1.0;
  o.summary = fmt(" (1,CW)=%.6f (1,CCW)=%.2e, max deviation from analytic mode %.1e, %.3f s", cw, ccw, dev, t);
  return o;
}

Outcome kerr_cats() {
  Clock c;
  Outcome o;
  const int cutoff = 30;
  const double chi = 1.0;
  ArrayParams p;
  p.N = 1;
  p.t1 = 0.0;
  p.chi = chi;
  p.kappa = 0.0;
  const auto space = build_space(1, TruncationScheme({cutoff, 1}));
  const ModeId m{1, Chirality::CW};
  EvolveSpec spec;
  spec.t_final = (pi / 2) / chi;
  spec.record_stride = (pi / 6) / chi;
  spec.rtol = 1e-10;
  spec.atol = 1e-12;
  spec.reduced_modes = {m};
  const auto tr = evolve(coherent_ket(space, m, 2.0), array_hamiltonian(space, p), {}, spec);
  dense_reports().push_back(tr.invariants);
  const auto& states = tr.reduced.at(m);
  auto overlap = [&](std::size_t k, CatKind kind) {
    const CVector cat = analytic_cat(kind, 2.0, cutoff).amplitudes;
    return cat.dot(states.at(k).matrix * cat).real();
  };
  // Records at chi t = 0, pi/6, pi/3, pi/2.
  const double f3 = overlap(2, CatKind::ThreeComponent), f2 = overlap(3, CatKind::TwoComponent);
  const double t = c.seconds();
  o.pass = f2 > 0.9999 && f3 > 0.9999 && t < 10.0;
  o.summary = fmt(" <cat|rho|cat> at pi/2: %.8f, at pi/3: %.8f, %.2f s", f2, f3, t);
  return o;
}

// ---------------------------------------------------------------------------

ArrayParams driven(int n, double t1, double t2) {
  ArrayParams p = chain(n, t1, t2);
  p.chi = 4 * pi;
  p.kappa = 1.0;
  p.gamma_drive = 1.0;
  p.eps = 8.0;
  return p;
}

std::vector<int> edge_bulk(int n, int edge, int bulk) {
  std::vector<int> c(static_cast<std::size_t>(2 * n), bulk);
  c[0] = c[1] = edge;
  return c;
}

struct SidebandPoint {
  double n = 0.0, se = 0.0;
};

SidebandPoint sideband(const CompositeSpace& space, const ArrayParams& p, Chirality dir, double delta,
                       const SteadyOptions& opt) {
  const double d[] = {delta};
  const auto pts = excitation_spectrum(space, p, dir, d, opt);
  if (!pts[0].error.empty()) throw NumericalError(pts[0].error);
  return {pts[0].n, pts[0].std_error};
}

Outcome excitation(int workers) {
  Clock c;
  Outcome o;
  const double chi = 4 * pi;

  // Small-space oracle: N = 2 at edge cutoff 4, bulk cutoff 3, deterministic steady states.
  SteadyOptions small;
  small.method = SteadyMethod::Evolution;
  const auto s2 = build_space(2, TruncationScheme(edge_bulk(2, 4, 3)));
  const ArrayParams topo2 = driven(2, 0.8, 16.0), triv2 = driven(2, 8.0, 4.0);
  const double o_topo = sideband(s2, topo2, Chirality::CW, -chi, small).n / sideband(s2, topo2, Chirality::CCW, -chi, small).n;
  const double o_triv = sideband(s2, triv2, Chirality::CW, -chi, small).n / sideband(s2, triv2, Chirality::CCW, -chi, small).n;
  o.details.push_back(fmt("oracle N=2 (4/3): ratio %.3f topological, %.3f trivial", o_topo, o_triv));

  // Reduced model: N = 3, edge cutoff 8, bulk cutoff 3, trajectory time averages.
  SteadyOptions traj;
  traj.method = SteadyMethod::Trajectories;
  traj.n_traj = 16;
  traj.burn_in = 4.0;
  traj.average_time = 12.0;
  traj.workers = workers;
  const auto s3 = build_space(3, TruncationScheme(edge_bulk(3, 8, 3)));
  const ArrayParams topo = driven(3, 0.8, 16.0), triv = driven(3, 8.0, 4.0);
  const SidebandPoint lo = sideband(s3, topo, Chirality::CW, -1.25 * chi, traj);
  const SidebandPoint mid = sideband(s3, topo, Chirality::CW, -chi, traj);
  const SidebandPoint hi = sideband(s3, topo, Chirality::CW, -0.75 * chi, traj);
  const SidebandPoint ccw = sideband(s3, topo, Chirality::CCW, -chi, traj);
  const SidebandPoint tcw = sideband(s3, triv, Chirality::CW, -chi, traj);
  const SidebandPoint tccw = sideband(s3, triv, Chirality::CCW, -chi, traj);
  const bool peak = mid.n > lo.n && mid.n > hi.n;
  const double ratio = mid.n / ccw.n, tratio = tcw.n / tccw.n;
  o.details.push_back(fmt("CW n at -1.25chi, -chi, -0.75chi: %.4f(%.4f) %.4f(%.4f) %.4f(%.4f)", lo.n, lo.se, mid.n, mid.se,
                          hi.n, hi.se));
  o.details.push_back(fmt("topological CCW n(-chi) %.4f(%.4f); trivial CW %.4f(%.4f), CCW %.4f(%.4f)", ccw.n, ccw.se,
                          tcw.n, tcw.se, tccw.n, tccw.se));
  o.details.push_back(fmt("reduced vs oracle ratio: topological %.3f vs %.3f, trivial %.3f vs %.3f", ratio, o_topo,
                          tratio, o_triv));
  const double t = c.seconds();
  o.pass = peak && ratio >= 5.0 && tratio < 2.0 && t < 1800.0;
  o.summary = fmt(" local max at -chi: %s, n_cw/n_ccw at -chi = %.3f (need >= 5), trivial %.3f (need < 2), %.0f s",
                  peak ? "yes" : "no", ratio, tratio, t);
  return o;
}

// ---------------------------------------------------------------------------

MetricSet two_cavity_metrics(Chirality dir, double kappa, const PhaseGrid& grid) {
  ArrayParams p = chain(2, 8.0, 20.0);
  p.chi = 4 * pi;
  p.kappa = kappa;
  const auto space = build_space(2, TruncationScheme({10, 10, 10, 10}));
  const ModeId m{1, dir};
  EvolveSpec spec;
  spec.t_final = (pi / 2) / p.chi;
  spec.reduced_modes = {m};
  spec.max_total_photons = 9;
  spec.exact_eigen_max_dim = 0;
  const auto tr = evolve(coherent_ket(space, m, 2.0), array_hamiltonian(space, p), array_collapses(space, p, false), spec);
  dense_reports().push_back(tr.invariants);
  return compute_metrics(tr.reduced.at(m).back(), grid);
}

Outcome two_cavity(bool diagnose) {
  Clock c;
  Outcome o;
  PhaseGrid g;
  g.x_min = g.p_min = -5.0;
  g.x_max = g.p_max = 5.0;
  g.nx = g.np = 241;
  const MetricSet cw = two_cavity_metrics(Chirality::CW, 1.0, g);
  const MetricSet ccw = two_cavity_metrics(Chirality::CCW, 1.0, g);
  const double rf = std::abs(cw.F - ccw.F);
  const double t = c.seconds();
  o.pass = std::abs(cw.F - 0.83) <= 0.05 && std::abs(ccw.F - 0.73) <= 0.05 && std::abs(rf - 0.06) <= 0.04 && t < 3600.0;
  o.summary = fmt(" F_cw=%.3f (0.83+-0.05) F_ccw=%.3f (0.73+-0.05) R_F=%.3f (0.06+-0.04), %.0f s", cw.F, ccw.F, rf, t);
  for (const auto* m : {&cw, &ccw}) {
    o.details.push_back(fmt("%s: delta=%.4f I=%.4f <n>=%.3f fit eta=%.3f beta=%.3f theta=%.3f", m == &cw ? "CW " : "CCW",
                            m->delta, m->I, m->n, m->fit.eta, m->fit.beta, m->fit.theta));
  }
  if (diagnose) {
    const MetricSet a = two_cavity_metrics(Chirality::CW, 0.01, g);
    const MetricSet b = two_cavity_metrics(Chirality::CCW, 0.01, g);
    o.details.push_back(fmt("diagnostic, kappa scaled by 0.01: F_cw=%.3f F_ccw=%.3f R_F=%.3f", a.F, b.F,
                            std::abs(a.F - b.F)));
  }
  return o;
}

// ---------------------------------------------------------------------------

Outcome transmission() {
  Clock c;
  Outcome o;
  o.pass = true;
  const double t2 = 8.0;
  double worst = 0.0;
  int compared = 0;
  for (const double ratio : {0.1, 0.4, 2.0}) {
    ArrayParams p = chain(40, ratio * t2, t2);
    const double e_in = std::abs(p.t2 - p.t1), e_out = p.t1 + p.t2;
    // Finite chains differ from the semi-infinite closed form within a few linewidths of a band edge.
    const double guard = 4.0 * (p.kappa + p.gamma_drive);
    for (int k = 0; k <= 600; ++k) {
      const double dp = -3.0 * t2 + 6.0 * t2 * k / 600.0;
      if (std::abs(std::abs(dp) - e_in) < guard || std::abs(std::abs(dp) - e_out) < guard) continue;
      for (const Chirality d : {Chirality::CW, Chirality::CCW}) {
        const cplx tn = numeric_reflection(p, dp, d);
        const cplx ta = analytic_transmission(p, dp, d).t;
        const double err = std::abs(ta - tn) / std::max(std::abs(tn), 0.05);
        worst = std::max(worst, err);
        ++compared;
      }
    }
  }
  const ArrayParams q = chain(40, 0.1 * t2, t2);
  const double tcw_num = numeric_transmission(q, 0.0, Chirality::CW);
  const double tcw_an = analytic_transmission(q, 0.0, Chirality::CW).T;
  const double t = c.seconds();
  o.pass = worst <= 0.05 && tcw_num < 0.05 && tcw_an < 0.05 && t < 10.0;
  o.summary = fmt(" worst relative |t| error %.2e over %d points, T_cw(0) numeric %.2e analytic %.2e, %.2f s", worst,
                  compared, tcw_num, tcw_an, t);
  return o;
}

// ---------------------------------------------------------------------------

Outcome invariants_run() {
  ArrayParams p = chain(2, 0.4, 8.0);
  p.chi = 2 * pi;
  const auto space = build_space(2, TruncationScheme({8, 8, 8, 8}));
  const ModeId m{1, Chirality::CW};
  EvolveSpec spec;
  spec.t_final = (pi / 2) / p.chi;
  spec.record_stride = spec.t_final / 8;
  spec.max_total_photons = 7;
  const auto tr = evolve(coherent_ket(space, m, 1.5), array_hamiltonian(space, p), array_collapses(space, p, false), spec);
  dense_reports().push_back(tr.invariants);
  Outcome o;
  o.pass = true;
  InvariantReport worst;
  for (const auto& r : dense_reports()) {
    o.pass = o.pass && r.holds();
    worst.max_trace_drift = std::max(worst.max_trace_drift, r.max_trace_drift);
    worst.max_hermiticity_error = std::max(worst.max_hermiticity_error, r.max_hermiticity_error);
    worst.max_purity = std::max(worst.max_purity, r.max_purity);
    worst.positive = worst.positive && r.positive;
  }
  o.summary = fmt("%zu dense runs: trace drift %.1e, Hermiticity %.1e, purity max %.6f, positive %s",
                  dense_reports().size(), worst.max_trace_drift, worst.max_hermiticity_error, worst.max_purity,
                  worst.positive ? "yes" : "no");
  return o;
}

Outcome trajectories_vs_dense(int workers) {
  ArrayParams p = chain(2, 0.4, 8.0);
  p.chi = 2 * pi;
  const auto space = build_space(2, TruncationScheme({6, 6, 3, 3}));
  const ModeId m{1, Chirality::CW};
  const auto h = array_hamiltonian(space, p);
  const auto cs = array_collapses(space, p, false);
  const std::vector<Observable> obs = {{"n_cw", mode_operator(space, m, OpKind::Number)},
                                       {"n_ccw", mode_operator(space, {1, Chirality::CCW}, OpKind::Number)}};
  EvolveSpec spec;
  spec.t_final = 0.4;
  spec.record_stride = 0.1;
  const Ket psi = coherent_ket(space, m, 1.0);
  const auto dense = evolve(psi, h, cs, spec, obs);
  dense_reports().push_back(dense.invariants);
  spec.method = EvolveMethod::Trajectories;
  spec.n_traj = 400;
  spec.seed = 7;
  spec.workers = workers;
  const auto mc = evolve(psi, h, cs, spec, obs);
  Outcome o;
  o.pass = true;
  double worst = 0.0;
  for (const auto& name : {"n_cw", "n_ccw"}) {
    for (std::size_t k = 1; k < dense.times.size(); ++k) {
      const double z = std::abs(mc.series(name)[k] - dense.series(name)[k]) / std::max(mc.errors(name)[k], 1e-12);
      worst = std::max(worst, z);
      if (z > 3.0) o.pass = false;
    }
  }
  o.summary = fmt("trajectories (400) vs dense on N=2: worst deviation %.2f sigma", worst);
  return o;
}

Outcome phase_space_oracles() {
  Outcome o;
  PhaseGrid g;
  g.x_min = g.p_min = -7.0;
  g.x_max = g.p_max = 7.0;
  g.nx = g.np = 281;
  const double d = negativity(wigner(pure(coherent_amplitudes(cplx(1.2, -0.7), 40)), g));
  double worst = 0.0;
  for (const auto& psi : {cat_amplitudes(2.0, pi / 2, 0.0, 40), cat_amplitudes(1.5, 0.0, 0.4, 40),
                          coherent_amplitudes(1.3, 40)}) {
    const DensityOp rho = pure(psi);
    // Pure states: I reduces to the photon-number variance <n> - |<a>|^2.
    const auto n = static_cast<Eigen::Index>(psi.size());
    const CVector a_psi = psi.tail(n - 1).cwiseProduct(Eigen::VectorXd::LinSpaced(n - 1, 1, double(n - 1)).cwiseSqrt().cast<cplx>());
    const double mean_n = a_psi.squaredNorm();
    const double oracle = mean_n - std::norm(psi.head(n - 1).dot(a_psi));
    const double grid = macroscopicity(rho, g);
    // Relative to the oracle, with a one-photon floor for nearly classical states.
    worst = std::max(worst, std::abs(grid - oracle) / std::max(std::abs(oracle), 1.0));
  }
  o.pass = std::abs(d) <= 1e-6 && worst <= 0.02;
  o.summary = fmt("coherent delta %.1e, worst macroscopicity deviation %.2f%%", d, 100 * worst);
  return o;
}

Outcome fit_recovery() {
  struct Case {
    double eta, beta, theta;
  };
  Outcome o;
  o.pass = true;
  double worst = 0.0;
  for (const Case c : {Case{2.0, pi / 2, 0.0}, Case{1.7, -0.8, 1.1}, Case{2.4, 2.5, -0.6}, Case{2.0, 0.9, 2.0}}) {
    const CatFit f = fit_cat(pure(cat_amplitudes(c.eta, c.beta, c.theta, 50)));
    // (eta, beta, theta) and (eta, -beta, theta + pi) describe the same state.
    const bool flip = std::abs(std::remainder(f.theta - c.theta, 2 * pi)) > pi / 2;
    const double e = std::max({std::abs(f.eta - c.eta), std::abs(std::remainder(f.beta - (flip ? -c.beta : c.beta), 2 * pi)),
                               std::abs(std::remainder(f.theta - c.theta - (flip ? pi : 0.0), 2 * pi))});
    worst = std::max(worst, e);
  }
  o.pass = worst < 1e-3;
  o.summary = fmt("worst parameter error %.1e over 4 synthetic cats", worst);
  return o;
}

Outcome properties(int workers) {
  Clock c;
  const Outcome b = trajectories_vs_dense(workers);
  const Outcome cc = phase_space_oracles();
  const Outcome d = fit_recovery();
  const Outcome a = invariants_run();
  Outcome o;
  o.pass = a.pass && b.pass && cc.pass && d.pass;
  o.summary = fmt(" (a)%s (b)%s (c)%s (d)%s, %.1f s", a.pass ? "ok" : "FAIL", b.pass ? "ok" : "FAIL",
                  cc.pass ? "ok" : "FAIL", d.pass ? "ok" : "FAIL", c.seconds());
  o.details = {"(a) " + a.summary, "(b) " + b.summary, "(c) " + cc.summary, "(d) " + d.summary};
  return o;
}

Outcome vacuum_wigner() {
  Outcome o;
  const double w = wigner_at(pure(coherent_amplitudes(0.0, 10)), 0.0);
  o.pass = std::abs(w - 2 / pi) < 1e-12;
  o.summary = fmt(" W_vac(0) = %.12f, 2/pi = %.12f", w, 2 / pi);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gates"};
  std::vector<int> selected;
  bool diagnose = false;
  int workers = 0;
  app.add_option("-c,--criterion", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_flag("--diagnose", diagnose, "Extra diagnostic runs for criterion 6");
  app.add_option("-w,--workers", workers, "Worker threads for trajectory runs");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::vector<std::pair<std::string, std::function<Outcome()>>> gates = {
      {"winding number transition", winding},
      {"edge spectrum", edge_spectrum},
      {"edge-profile chirality", edge_chirality},
      {"single-mode Kerr cats", kerr_cats},
      {"nonreciprocal excitation spectrum", [&] { return excitation(workers); }},
      {"two-cavity metrics", [&] { return two_cavity(diagnose); }},
      {"transmission", transmission},
      {"property substitutes", [&] { return properties(workers); }},
      {"Wigner convention", vacuum_wigner},
  };

  bool all = true;
  for (const int k : selected) {
    const auto& [name, run] = gates[static_cast<std::size_t>(k - 1)];
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string(" error: ") + e.what();
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << name << "):" << o.summary << "\n";
    for (const auto& d : o.details) std::cout << "    " << d << "\n";
    std::cout.flush();
  }
  return all ? 0 : 1;
}
