#include "mcwf.hpp"
#include "topocat/dynamics.hpp"
#include "topocat/errors.hpp"
#include "topocat/ode.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace topocat {

namespace {

using ColSparse = Eigen::SparseMatrix<cplx>;
using Triplet = Eigen::Triplet<cplx>;

// Column-stacking convention: vec(A X B) = (B^T kron A) vec(X).
void kron_triplets(const ColSparse& a, const ColSparse& b, cplx scale, std::vector<Triplet>& out) {
  const Eigen::Index nb = b.rows();
  for (Eigen::Index ka = 0; ka < a.outerSize(); ++ka) {
    for (ColSparse::InnerIterator ia(a, ka); ia; ++ia) {
      for (Eigen::Index kb = 0; kb < b.outerSize(); ++kb) {
        for (ColSparse::InnerIterator ib(b, kb); ib; ++ib) {
          out.emplace_back(ia.row() * nb + ib.row(), ia.col() * nb + ib.col(), scale * ia.value() * ib.value());
        }
      }
    }
  }
}

std::vector<Triplet> vectorized_liouvillian(const LinOp& h, std::span<const Collapse> collapses) {
  const auto d = static_cast<Eigen::Index>(h.dimension());
  ColSparse id(d, d);
  id.setIdentity();
  ColSparse heff = h.matrix();
  for (const auto& c : collapses) {
    if (c.rate == 0.0) continue;
    const ColSparse cm = c.op.matrix();
    heff -= cplx(0.0, c.rate) * ColSparse(cm.adjoint() * cm);
  }
  std::vector<Triplet> t;
  kron_triplets(id, heff, cplx(0.0, -1.0), t);
  kron_triplets(ColSparse(heff.conjugate()), id, cplx(0.0, 1.0), t);
  for (const auto& c : collapses) {
    if (c.rate == 0.0) continue;
    const ColSparse cm = c.op.matrix();
    kron_triplets(ColSparse(cm.conjugate()), cm, 2.0 * c.rate, t);
  }
  return t;
}

// Solves L x = 0 with row `replace` swapped for the trace constraint.
CVector solve_with_trace_row(const std::vector<Triplet>& lt, Eigen::Index d, Eigen::Index replace) {
  const Eigen::Index n = d * d;
  std::vector<Triplet> t;
  t.reserve(lt.size() + static_cast<std::size_t>(d));
  for (const auto& e : lt) {
    if (e.row() != replace) t.push_back(e);
  }
  for (Eigen::Index i = 0; i < d; ++i) t.emplace_back(replace, i + i * d, cplx(1.0));
  ColSparse a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  a.makeCompressed();
  Eigen::SparseLU<ColSparse, Eigen::COLAMDOrdering<int>> lu;
  lu.analyzePattern(a);
  lu.factorize(a);
  if (lu.info() != Eigen::Success) {
    throw AmbiguityError("steady-state system is singular (" + lu.lastErrorMessage() +
                         "); the Liouvillian kernel is not one-dimensional");
  }
  CVector rhs = CVector::Zero(n);
  rhs(replace) = 1.0;
  CVector x = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !x.allFinite()) {
    throw AmbiguityError("steady-state solve failed; the Liouvillian kernel is not one-dimensional");
  }
  return x;
}

double positive_rate_floor(std::span<const Collapse> collapses) {
  double r = std::numeric_limits<double>::infinity();
  for (const auto& c : collapses) {
    if (c.rate > 0.0) r = std::min(r, c.rate);
  }
  if (!std::isfinite(r)) throw UsageError("steady state needs at least one dissipative channel");
  return r;
}

void fill_from_rho(SteadyStateResult& res, std::span<const Observable> observables, const SteadyOptions& opt) {
  const DensityOp& rho = *res.rho;
  for (const auto& o : observables) res.observables[o.name] = Estimate{expect(o.op, rho).real(), 0.0};
  for (const auto& m : opt.reduced_modes) res.reduced.emplace(m, reduced_mode_state(rho, m));
}

SteadyStateResult steady_direct(const LinOp& h, std::span<const Collapse> collapses,
                                std::span<const Observable> observables, const SteadyOptions& opt) {
  const auto d = static_cast<Eigen::Index>(h.dimension());
  const std::vector<Triplet> lt = vectorized_liouvillian(h, collapses);
  double scale = 1.0;
  for (const auto& e : lt) scale = std::max(scale, std::abs(e.value()));

  const CVector x = solve_with_trace_row(lt, d, 0);
  if (d > 1) {
    // A unique kernel gives the same answer whichever diagonal equation is dropped.
    const CVector x2 = solve_with_trace_row(lt, d, (d - 1) + (d - 1) * d);
    const double diff = (x - x2).cwiseAbs().maxCoeff();
    if (diff > 1e-6 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
      std::ostringstream os;
      os << "steady state is not unique: solutions differ by " << diff
         << " depending on the constraint row (Liouvillian kernel dimension > 1)";
      throw AmbiguityError(os.str());
    }
  }
  CMatrix rho = Eigen::Map<const CMatrix>(x.data(), d, d);
  rho = 0.5 * (rho + rho.adjoint()).eval();
  rho /= rho.trace();

  SteadyStateResult res;
  res.method = SteadyMethod::Direct;
  res.rho = DensityOp{h.space(), rho};
  CMatrix lr;
  Liouvillian(h, collapses).apply(rho, lr);
  res.residual = lr.norm();
  if (!(res.residual <= opt.tolerance * scale * static_cast<double>(d))) {
    std::ostringstream os;
    os << "steady-state residual " << res.residual << " above tolerance";
    throw NumericalError(os.str());
  }
  fill_from_rho(res, observables, opt);
  return res;
}

SteadyStateResult steady_evolution(const LinOp& h, std::span<const Collapse> collapses,
                                   std::span<const Observable> observables, const SteadyOptions& opt) {
  const double r = positive_rate_floor(collapses);
  SteadyStateResult res;
  res.method = SteadyMethod::Evolution;
  const Liouvillian l(h, collapses);
  CMatrix y = DensityOp::from_ket(vacuum_ket(h.space())).matrix;
  const OdeOptions oo;
  const double tf = opt.evolution_time / r;
  // Integrate in chunks of 1/rate and stop once rho settles.
  double t = 0.0;
  while (t < tf) {
    const double t_next = std::min(tf, t + 1.0 / r);
    const CMatrix prev = y;
    integrate_dopri5([&l](double, const CMatrix& rho, CMatrix& dr) { l.apply_hermitian(rho, dr); }, t, y,
                     std::span<const double>(&t_next, 1), [](double, const CMatrix&) {}, oo);
    t = t_next;
    if ((y - prev).cwiseAbs().maxCoeff() < opt.settle_tolerance) break;
  }
  y /= y.trace();
  res.rho = DensityOp{h.space(), y};
  CMatrix lr;
  l.apply(y, lr);
  res.residual = lr.norm();
  fill_from_rho(res, observables, opt);
  return res;
}

SteadyStateResult steady_trajectories(const LinOp& h, std::span<const Collapse> collapses,
                                      std::span<const Observable> observables, const SteadyOptions& opt) {
  if (opt.n_traj < 2) throw UsageError("trajectory steady state needs n_traj >= 2");
  if (!(opt.sample_dt > 0.0) || !(opt.average_time > 0.0) || opt.burn_in < 0.0) {
    throw UsageError("trajectory steady state needs burn_in >= 0, average_time > 0, sample_dt > 0");
  }
  const double r = positive_rate_floor(collapses);
  std::vector<double> times;
  const auto samples = static_cast<long>(std::floor(opt.average_time / opt.sample_dt + 1e-9));
  for (long k = 0; k <= samples; ++k) times.push_back((opt.burn_in + static_cast<double>(k) * opt.sample_dt) / r);

  const detail::McwfEngine engine(h, collapses, observables, opt.reduced_modes);
  const std::size_t no = observables.size();
  std::vector<double> sum(no, 0.0), sumsq(no, 0.0);
  std::vector<CMatrix> rsum(opt.reduced_modes.size());
  const double ns = static_cast<double>(times.size());
  detail::run_ensemble(engine, vacuum_ket(h.space()), times, opt.n_traj, opt.seed, opt.workers,
                       [&](int, const detail::McwfSamples& s) {
                         for (std::size_t i = 0; i < no; ++i) {
                           double avg = 0.0;
                           for (double v : s.values[i]) avg += v;
                           avg /= ns;
                           sum[i] += avg;
                           sumsq[i] += avg * avg;
                         }
                         for (std::size_t m = 0; m < rsum.size(); ++m) {
                           CMatrix acc = CMatrix::Zero(s.reduced[m][0].rows(), s.reduced[m][0].cols());
                           for (const auto& rm : s.reduced[m]) acc += rm;
                           acc /= ns;
                           if (rsum[m].size() == 0) {
                             rsum[m] = acc;
                           } else {
                             rsum[m] += acc;
                           }
                         }
                       });
  SteadyStateResult res;
  res.method = SteadyMethod::Trajectories;
  res.residual = std::numeric_limits<double>::quiet_NaN();
  const double n = opt.n_traj;
  for (std::size_t i = 0; i < no; ++i) {
    const double mean = sum[i] / n;
    const double var = std::max(0.0, (sumsq[i] - n * mean * mean) / (n - 1));
    res.observables[observables[i].name] = Estimate{mean, std::sqrt(var / n)};
  }
  for (std::size_t m = 0; m < rsum.size(); ++m) {
    const ModeId mode = opt.reduced_modes[m];
    res.reduced.emplace(mode, DensityOp{CompositeSpace::single_mode(h.space().dim(mode), mode), rsum[m] / n});
  }
  return res;
}

}  // namespace

std::string to_string(SteadyMethod m) {
  switch (m) {
    case SteadyMethod::Auto: return "auto";
    case SteadyMethod::Direct: return "direct";
    case SteadyMethod::Evolution: return "evolution";
    case SteadyMethod::Trajectories: return "trajectories";
  }
  return "unknown";
}

SteadyStateResult steady_state(const LinOp& h_rot, std::span<const Collapse> collapses,
                               std::span<const Observable> observables, const SteadyOptions& opt) {
  for (const auto& c : collapses) {
    if (!(c.op.space() == h_rot.space())) throw DimensionError("collapse operator lives on a different space");
    if (c.rate < 0.0) throw UsageError("collapse rates must be >= 0");
  }
  const std::size_t d = h_rot.dimension();
  SteadyMethod m = opt.method;
  if (m == SteadyMethod::Auto) {
    if (d <= opt.direct_max_dim) {
      m = SteadyMethod::Direct;
    } else if (d <= opt.evolution_max_dim) {
      m = SteadyMethod::Evolution;
    } else {
      m = SteadyMethod::Trajectories;
    }
  }
  switch (m) {
    case SteadyMethod::Direct: return steady_direct(h_rot, collapses, observables, opt);
    case SteadyMethod::Evolution: return steady_evolution(h_rot, collapses, observables, opt);
    default: return steady_trajectories(h_rot, collapses, observables, opt);
  }
}

std::vector<SpectrumPoint> excitation_spectrum(const CompositeSpace& space, ArrayParams p, Chirality direction,
                                               std::span<const double> delta_grid, const SteadyOptions& opt) {
  p.direction = direction;
  p.validate();
  const ModeId driven{1, direction};
  const std::vector<Observable> obs{{"n", mode_operator(space, driven, OpKind::Number)}};
  std::vector<SpectrumPoint> out;
  out.reserve(delta_grid.size());
  for (const double delta : delta_grid) {
    SpectrumPoint pt;
    pt.delta = delta;
    if (!std::isfinite(delta)) {
      pt.error = "non-finite detuning";
      pt.n = std::numeric_limits<double>::quiet_NaN();
      out.push_back(pt);
      continue;
    }
    p.delta = delta;
    try {
      const LinOp h = driven_hamiltonian(space, p);
      const auto collapses = array_collapses(space, p, true);
      const SteadyStateResult r = steady_state(h, collapses, obs, opt);
      pt.n = r.observables.at("n").mean;
      pt.std_error = r.observables.at("n").std_error;
      pt.method = to_string(r.method);
    } catch (const Error& e) {
      pt.n = std::numeric_limits<double>::quiet_NaN();
      pt.error = e.what();
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace topocat
