#include "topocat/dynamics.hpp"

#include "mcwf.hpp"
#include "topocat/errors.hpp"
#include "topocat/krylov.hpp"
#include "topocat/ode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace topocat {

namespace {

constexpr cplx kI{0.0, 1.0};

void check_same_space(const LinOp& h, std::span<const Collapse> collapses) {
  for (const auto& c : collapses) {
    if (!(c.op.space() == h.space())) throw DimensionError("collapse operator lives on a different space than H");
    if (c.rate < 0.0 || !std::isfinite(c.rate)) throw UsageError("collapse rates must be finite and >= 0");
  }
}

SparseOp build_heff(const LinOp& h, std::span<const Collapse> collapses) {
  SparseOp heff = h.matrix();
  for (const auto& c : collapses) {
    if (c.rate == 0.0) continue;
    const SparseOp cdc = SparseOp(c.op.matrix().adjoint()) * c.op.matrix();
    heff -= kI * c.rate * cdc;
  }
  heff.prune(cplx(0.0));
  heff.makeCompressed();
  return heff;
}

double hermiticity_error_of(const CMatrix& m) {
  double e = 0.0;
  const Eigen::Index n = m.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) e = std::max(e, std::abs(m(i, j) - std::conj(m(j, i))));
  }
  return e;
}

// Available memory in bytes from /proc/meminfo, or 0 if unknown.
std::size_t available_memory() {
  std::ifstream in("/proc/meminfo");
  std::string key;
  std::size_t value = 0;
  std::string unit;
  while (in >> key >> value >> unit) {
    if (key == "MemAvailable:") return value * 1024;
  }
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// EvolveSpec / Trajectory

void EvolveSpec::validate() const {
  if (!(t_final > 0.0) || !std::isfinite(t_final)) throw UsageError("t_final must be > 0");
  if (!(rtol > 0.0) || !(atol > 0.0)) throw UsageError("integrator tolerances must be > 0");
  if (record_stride < 0.0 || !std::isfinite(record_stride)) throw UsageError("record stride must be >= 0");
  if (method == EvolveMethod::Trajectories && n_traj < 1) throw UsageError("n_traj must be >= 1");
  if (method == EvolveMethod::Trajectories && max_total_photons >= 0) {
    throw UsageError("the total-photon cap is only available for dense evolution");
  }
}

std::vector<double> EvolveSpec::record_times() const {
  std::vector<double> times{0.0};
  if (record_stride > 0.0) {
    for (long k = 1;; ++k) {
      const double t = static_cast<double>(k) * record_stride;
      if (t >= t_final * (1.0 - 1e-12)) break;
      times.push_back(t);
    }
  }
  times.push_back(t_final);
  return times;
}

const std::vector<double>& Trajectory::series(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values[i];
  }
  throw IndexError("no recorded observable named '" + name + "'");
}

const std::vector<double>& Trajectory::errors(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return std_errors[i];
  }
  throw IndexError("no recorded observable named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Liouvillian

namespace {

// Group the nonzeros of `op` by offset col - row.
template <class Diag>
std::vector<Diag> diagonals_of(const SparseOp& op) {
  const Eigen::Index n = op.rows();
  std::map<Eigen::Index, Diag> by_offset;
  for (Eigen::Index r = 0; r < op.outerSize(); ++r) {
    for (SparseOp::InnerIterator it(op, r); it; ++it) {
      if (it.value() == cplx(0.0)) continue;
      auto [pos, fresh] = by_offset.try_emplace(it.col() - r);
      Diag& d = pos->second;
      if (fresh) {
        d.offset = it.col() - r;
        d.w = CVector::Zero(n);
        d.lo = r;
      }
      d.w(r) = it.value();
      d.hi = r + 1;
    }
  }
  std::vector<Diag> out;
  for (auto& [offset, d] : by_offset) out.push_back(std::move(d));
  return out;
}

// Banded storage pays off only when the stored diagonals are mostly nonzero.
template <class Diag>
bool worth_banding(const std::vector<Diag>& diags, Eigen::Index nnz) {
  Eigen::Index stored = 0;
  for (const auto& d : diags) stored += d.hi - d.lo;
  return diags.size() <= 64 && stored <= 2 * nnz;
}

}  // namespace

Liouvillian::Liouvillian(const LinOp& h, std::span<const Collapse> collapses)
    : Liouvillian(build_heff(h, {}), [&] {
        check_same_space(h, collapses);
        std::vector<std::pair<SparseOp, double>> jumps;
        for (const auto& c : collapses) jumps.emplace_back(c.op.matrix(), c.rate);
        return jumps;
      }()) {}

Liouvillian::Liouvillian(const SparseOp& h, const std::vector<std::pair<SparseOp, double>>& jumps)
    : dim_(static_cast<std::size_t>(h.rows())) {
  heff_ = h;
  for (const auto& [op, rate] : jumps) {
    if (op.rows() != h.rows() || op.cols() != h.cols()) throw DimensionError("jump operator size does not match H");
    if (rate < 0.0 || !std::isfinite(rate)) throw UsageError("collapse rates must be finite and >= 0");
    if (rate == 0.0) continue;
    heff_ -= kI * rate * SparseOp(SparseOp(op.adjoint()) * op);
  }
  heff_.prune(cplx(0.0));
  heff_.makeCompressed();
  auto diags = diagonals_of<Diagonal>(heff_);
  if (worth_banding(diags, heff_.nonZeros())) heff_diagonals_ = std::move(diags);
  for (const auto& [op, rate] : jumps) {
    if (rate == 0.0) continue;
    Jump j;
    j.rate2 = 2.0 * rate;
    j.op = op;
    j.op.prune(cplx(0.0));
    j.op.makeCompressed();
    auto jd = diagonals_of<Diagonal>(j.op);
    if (jd.size() == 1) {
      j.diag = std::move(jd.front());
    } else {
      const SparseOp ct = j.op.transpose();
      bool single = true;
      for (Eigen::Index k = 0; k < j.op.outerSize() && single; ++k) {
        single = j.op.innerVector(k).nonZeros() <= 1 && ct.innerVector(k).nonZeros() <= 1;
      }
      if (single) {
        j.w.resize(j.op.nonZeros());
        for (Eigen::Index k = 0; k < j.op.outerSize(); ++k) {
          for (SparseOp::InnerIterator it(j.op, k); it; ++it) {
            j.w(static_cast<Eigen::Index>(j.row.size())) = it.value();
            j.row.push_back(it.row());
            j.src.push_back(it.col());
          }
        }
      }
    }
    jumps_.push_back(std::move(j));
  }
}

void Liouvillian::add_jumps(const CMatrix& rho, CMatrix& out) const {
  for (const auto& j : jumps_) {
    if (j.diag) {
      // out(r, c) += 2 rate w_r conj(w_c) rho(r + s, c + s)
      const auto& d = *j.diag;
      const Eigen::Index s = d.offset, len = d.hi - d.lo;
      for (Eigen::Index c = d.lo; c < d.hi; ++c) {
        const cplx wc = d.w(c);
        if (wc == cplx(0.0)) continue;
        out.col(c).segment(d.lo, len).array() +=
            (j.rate2 * std::conj(wc)) * d.w.segment(d.lo, len).array() * rho.col(c + s).segment(d.lo + s, len).array();
      }
    } else if (!j.row.empty()) {
      const auto m = static_cast<Eigen::Index>(j.row.size());
      for (Eigen::Index b = 0; b < m; ++b) {
        const cplx wb = j.rate2 * std::conj(j.w(b));
        const auto rho_col = rho.col(j.src[b]);
        auto out_col = out.col(j.row[b]);
        for (Eigen::Index a = 0; a < m; ++a) out_col(j.row[a]) += wb * j.w(a) * rho_col(j.src[a]);
      }
    } else {
      const CMatrix t = j.op * rho;
      out.noalias() += j.rate2 * (j.op * t.adjoint()).adjoint();
    }
  }
}

void Liouvillian::apply(const CMatrix& rho, CMatrix& out) const {
  if (static_cast<std::size_t>(rho.rows()) != dim_ || rho.rows() != rho.cols()) {
    throw DimensionError("density matrix dimension does not match the Liouvillian");
  }
  out.resize(rho.rows(), rho.cols());
  out.noalias() = -kI * (heff_ * rho);
  const CMatrix right = heff_ * rho.adjoint();
  out.noalias() += kI * right.adjoint();
  add_jumps(rho, out);
}

void Liouvillian::apply_hermitian(const CMatrix& rho, CMatrix& out) const {
  const Eigen::Index n = rho.rows();
  if (static_cast<std::size_t>(n) != dim_ || n != rho.cols()) {
    throw DimensionError("density matrix dimension does not match the Liouvillian");
  }
  if (heff_diagonals_.empty()) {
    work_.noalias() = heff_ * rho;
  } else {
    work_.setZero(n, n);
  }
  for (Eigen::Index c = 0; c < n && !heff_diagonals_.empty(); ++c) {
    for (const auto& d : heff_diagonals_) {
      const Eigen::Index len = d.hi - d.lo;
      work_.col(c).segment(d.lo, len).array() +=
          d.w.segment(d.lo, len).array() * rho.col(c).segment(d.lo + d.offset, len).array();
    }
  }
  out.resize(n, n);
  // out = -i C + (-i C)^dagger, blocked for cache-friendly transposition.
  constexpr Eigen::Index B = 64;
  for (Eigen::Index jb = 0; jb < n; jb += B) {
    const Eigen::Index je = std::min(n, jb + B);
    for (Eigen::Index ib = 0; ib < n; ib += B) {
      const Eigen::Index ie = std::min(n, ib + B);
      for (Eigen::Index j = jb; j < je; ++j) {
        for (Eigen::Index i = ib; i < ie; ++i) {
          const cplx a = work_(i, j);
          const cplx b = work_(j, i);
          out(i, j) = cplx(a.imag() + b.imag(), -a.real() + b.real());
        }
      }
    }
  }
  add_jumps(rho, out);
}

CMatrix liouvillian_apply(const LinOp& h, std::span<const Collapse> collapses, const DensityOp& rho) {
  if (!(rho.space == h.space())) throw DimensionError("density operator and Hamiltonian live on different spaces");
  Liouvillian l(h, collapses);
  CMatrix out;
  l.apply(rho.matrix, out);
  return out;
}

// ---------------------------------------------------------------------------
// Dense master equation

namespace {

cplx trace_product(const SparseOp& op, const CMatrix& rho) {
  cplx s = 0.0;
  for (Eigen::Index r = 0; r < op.outerSize(); ++r) {
    for (SparseOp::InnerIterator it(op, r); it; ++it) s += it.value() * rho(it.col(), r);
  }
  return s;
}

void check_positivity(const CMatrix& rho, std::size_t exact_max, InvariantReport& rep) {
  const Eigen::Index n = rho.rows();
  const CMatrix herm = 0.5 * (rho + rho.adjoint());
  if (static_cast<std::size_t>(n) <= exact_max) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(herm, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues()(0);
    rep.min_eigenvalue = std::isnan(rep.min_eigenvalue) ? lo : std::min(rep.min_eigenvalue, lo);
    if (lo <= -1e-7) rep.positive = false;
    return;
  }
  CMatrix shifted = herm;
  shifted.diagonal().array() += 1e-7;
  Eigen::LLT<CMatrix> llt(shifted);
  if (llt.info() != Eigen::Success) rep.positive = false;
}

// Product states kept by a total-photon cap, as flat indices of the full space.
std::vector<Eigen::Index> capped_basis(const CompositeSpace& space, int cap) {
  std::vector<Eigen::Index> keep;
  const std::size_t modes = space.mode_count();
  for (std::size_t f = 0; f < space.dimension(); ++f) {
    int total = 0;
    for (std::size_t m = 0; m < modes && total <= cap; ++m) total += space.occupation(f, m);
    if (total <= cap) keep.push_back(static_cast<Eigen::Index>(f));
  }
  return keep;
}

SparseOp restrict_to(const SparseOp& op, const std::vector<Eigen::Index>& position, Eigen::Index n) {
  std::vector<Eigen::Triplet<cplx>> t;
  for (Eigen::Index r = 0; r < op.outerSize(); ++r) {
    if (position[r] < 0) continue;
    for (SparseOp::InnerIterator it(op, r); it; ++it) {
      if (position[it.col()] >= 0) t.emplace_back(position[r], position[it.col()], it.value());
    }
  }
  SparseOp out(n, n);
  out.setFromTriplets(t.begin(), t.end());
  out.makeCompressed();
  return out;
}

// Single-mode partial trace for a density matrix stored on a subset of product states.
class ModeTracer {
 public:
  ModeTracer(const CompositeSpace& space, const std::vector<Eigen::Index>& keep, const ModeId& mode)
      : dim_(space.dim(mode)) {
    const std::size_t pos = space.position(mode);
    const std::size_t stride = space.strides()[pos];
    std::map<std::size_t, std::size_t> group_of;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const auto flat = static_cast<std::size_t>(keep[k]);
      const int occ = space.occupation(flat, pos);
      const std::size_t rest = flat - static_cast<std::size_t>(occ) * stride;
      auto [it, fresh] = group_of.try_emplace(rest, groups_.size());
      if (fresh) groups_.emplace_back();
      groups_[it->second].emplace_back(static_cast<Eigen::Index>(k), occ);
    }
  }
  CMatrix operator()(const CMatrix& rho) const {
    CMatrix out = CMatrix::Zero(dim_, dim_);
    for (const auto& g : groups_) {
      for (const auto& [i, a] : g) {
        for (const auto& [j, b] : g) out(a, b) += rho(i, j);
      }
    }
    return out;
  }

 private:
  int dim_;
  std::vector<std::vector<std::pair<Eigen::Index, int>>> groups_;
};

}  // namespace

namespace {

// Exactly one of rho0 / psi0 is set; a ket is restricted before the outer product.
Trajectory evolve_dense(const DensityOp* rho0, const Ket* psi0, const LinOp& h, std::span<const Collapse> collapses,
                        const EvolveSpec& spec, std::span<const Observable> observables) {
  spec.validate();
  const CompositeSpace& space = rho0 ? rho0->space : psi0->space;
  if (!(space == h.space())) throw DimensionError("initial state and Hamiltonian live on different spaces");
  check_same_space(h, collapses);
  for (const auto& o : observables) {
    if (!(o.op.space() == h.space())) throw DimensionError("observable '" + o.name + "' lives on a different space");
  }
  const bool capped = spec.max_total_photons >= 0;
  std::vector<Eigen::Index> keep;
  if (capped) keep = capped_basis(space, spec.max_total_photons);
  const std::size_t dim = capped ? keep.size() : space.dimension();
  if (dim == 0) throw UsageError("the photon cap leaves an empty space");
  if (dim > kDensityDimCap) {
    throw CapacityError("density-matrix evolution at dimension " + std::to_string(dim) + " exceeds the cap " +
                        std::to_string(kDensityDimCap));
  }
  // The integrator holds about a dozen dense dim x dim buffers.
  const double need = 12.0 * static_cast<double>(dim) * static_cast<double>(dim) * sizeof(cplx);
  const std::size_t avail = available_memory();
  if (avail > 0 && need > 0.9 * static_cast<double>(avail)) {
    std::ostringstream os;
    os << "dense evolution at dimension " << dim << " needs ~" << need / 1e9 << " GB, only "
       << static_cast<double>(avail) / 1e9 << " GB available; use trajectories";
    throw CapacityError(os.str());
  }

  // Everything below works in the kept basis (the full space when uncapped).
  std::vector<Eigen::Index> position;
  auto shrink = [&](const SparseOp& op) { return capped ? restrict_to(op, position, static_cast<Eigen::Index>(dim)) : op; };
  CMatrix y;
  cplx full_trace;
  if (capped) {
    position.assign(space.dimension(), -1);
    for (std::size_t k = 0; k < keep.size(); ++k) position[keep[k]] = static_cast<Eigen::Index>(k);
    const auto n = static_cast<Eigen::Index>(dim);
    if (rho0) {
      full_trace = rho0->trace();
      y.resize(n, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) y(i, j) = rho0->matrix(keep[i], keep[j]);
      }
    } else {
      full_trace = psi0->amplitudes.squaredNorm();
      CVector v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = psi0->amplitudes(keep[i]);
      y = v * v.adjoint();
    }
    const double lost = std::abs(full_trace - y.trace());
    if (lost > 1e-4 * std::abs(full_trace)) {
      std::ostringstream os;
      os << "photon cap " << spec.max_total_photons << " drops " << lost << " of the initial trace";
      warn(os.str());
    }
    if (std::abs(y.trace()) > 0.0) y *= full_trace / y.trace();
  } else if (rho0) {
    y = rho0->matrix;
  } else {
    y = psi0->amplitudes * psi0->amplitudes.adjoint();
  }
  y = (0.5 * (y + y.adjoint())).eval();

  std::vector<std::pair<SparseOp, double>> jumps;
  for (const auto& c : collapses) jumps.emplace_back(shrink(c.op.matrix()), c.rate);
  const Liouvillian l(shrink(h.matrix()), jumps);
  std::vector<SparseOp> obs_ops;
  for (const auto& o : observables) obs_ops.push_back(shrink(o.op.matrix()));
  std::vector<ModeTracer> tracers;
  if (capped) {
    for (const auto& m : spec.reduced_modes) tracers.emplace_back(space, keep, m);
  }
  const std::vector<double> times = spec.record_times();

  Trajectory out;
  out.method = "dense_master";
  out.n_traj = 1;
  for (const auto& o : observables) {
    out.names.push_back(o.name);
    out.values.emplace_back();
    out.std_errors.emplace_back();
  }
  out.invariants.min_eigenvalue = std::numeric_limits<double>::quiet_NaN();
  const cplx tr0 = y.trace();

  auto observer = [&](double t, const CMatrix& rho) {
    out.times.push_back(t);
    for (std::size_t i = 0; i < obs_ops.size(); ++i) {
      out.values[i].push_back(trace_product(obs_ops[i], rho).real());
      out.std_errors[i].push_back(0.0);
    }
    for (std::size_t k = 0; k < spec.reduced_modes.size(); ++k) {
      const ModeId& m = spec.reduced_modes[k];
      if (capped) {
        out.reduced[m].push_back(DensityOp{CompositeSpace::single_mode(space.dim(m), m), tracers[k](rho)});
      } else {
        out.reduced[m].push_back(reduced_mode_state(DensityOp{space, rho}, m));
      }
    }
    if (spec.check_invariants) {
      auto& rep = out.invariants;
      rep.max_trace_drift = std::max(rep.max_trace_drift, std::abs(rho.trace() - tr0));
      rep.max_hermiticity_error = std::max(rep.max_hermiticity_error, hermiticity_error_of(rho));
      rep.max_purity = std::max(rep.max_purity, rho.squaredNorm() / std::norm(rho.trace()));
      check_positivity(rho, spec.exact_eigen_max_dim, rep);
    }
  };

  OdeOptions opt;
  opt.rtol = spec.rtol;
  opt.atol = spec.atol;
  auto rhs = [&l](double, const CMatrix& rho, CMatrix& d) { l.apply_hermitian(rho, d); };
  try {
    const OdeStats stats =
        integrate_dopri5(rhs, 0.0, y, std::span<const double>(times).subspan(1), observer, opt);
    out.steps = stats.accepted;
  } catch (const NumericalError& e) {
    throw EvolutionFailure(e.what(), std::move(out));
  }
  return out;
}

}  // namespace

Trajectory evolve_master(const DensityOp& rho0, const LinOp& h, std::span<const Collapse> collapses,
                         const EvolveSpec& spec, std::span<const Observable> observables) {
  return evolve_dense(&rho0, nullptr, h, collapses, spec, observables);
}

// ---------------------------------------------------------------------------
// Trajectories

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TOPOCAT_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min<long>(v, 1024));
    warn(std::string("ignoring invalid TOPOCAT_WORKERS='") + env + "'");
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace detail {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(seed) ^ mix(index + 0x632be59bd9b4e019ULL));
}

McwfEngine::McwfEngine(const LinOp& h, std::span<const Collapse> collapses, std::span<const Observable> observables,
                       std::vector<ModeId> reduced_modes)
    : space_(h.space()),
      heff_(build_heff(h, collapses)),
      observables_(observables.begin(), observables.end()),
      reduced_modes_(std::move(reduced_modes)) {
  check_same_space(h, collapses);
  for (const auto& o : observables_) {
    if (!(o.op.space() == space_)) throw DimensionError("observable '" + o.name + "' lives on a different space");
  }
  for (const auto& c : collapses) {
    if (c.rate == 0.0) continue;
    SparseOp j = std::sqrt(2.0 * c.rate) * c.op.matrix();
    j.prune(cplx(0.0));
    j.makeCompressed();
    jumps_.push_back(std::move(j));
  }
  krylov_dim_ = static_cast<int>(std::min<std::size_t>(30, space_.dimension()));
}

void McwfEngine::record(const CVector& psi, McwfSamples& out, std::size_t slot) const {
  const double n2 = psi.squaredNorm();
  for (std::size_t i = 0; i < observables_.size(); ++i) {
    out.values[i][slot] = psi.dot(observables_[i].op.matrix() * psi).real() / n2;
  }
  if (!reduced_modes_.empty()) {
    const Ket k{space_, psi / std::sqrt(n2)};
    for (std::size_t m = 0; m < reduced_modes_.size(); ++m) {
      out.reduced[m][slot] = reduced_mode_state(k, reduced_modes_[m]).matrix;
    }
  }
}

McwfSamples McwfEngine::run(const Ket& psi0, std::span<const double> times, std::uint64_t seed) const {
  if (!(psi0.space == space_)) throw DimensionError("initial ket lives on a different space");
  McwfSamples out;
  out.values.assign(observables_.size(), std::vector<double>(times.size(), 0.0));
  out.reduced.assign(reduced_modes_.size(), std::vector<CMatrix>(times.size()));
  if (times.empty()) return out;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto draw = [&] {
    double u = 0.0;
    while (u <= 0.0) u = uni(rng);
    return u;
  };

  CVector psi = psi0.amplitudes;
  psi /= psi.norm();
  double threshold = draw();
  double t = 0.0;
  std::size_t next = 0;
  if (times[0] <= 0.0) record(psi, out, next++);

  const SparseOp& heff = heff_;
  const KrylovSubspace::Apply apply = [&heff](const CVector& in, CVector& o) { o.noalias() = -kI * (heff * in); };

  // Rough spectral scale for the first step.
  double scale = 1e-3;
  for (Eigen::Index r = 0; r < heff.outerSize(); ++r) {
    double row = 0.0;
    for (SparseOp::InnerIterator it(heff, r); it; ++it) row += std::abs(it.value());
    scale = std::max(scale, row);
  }
  double dt = 0.5 * krylov_dim_ / scale;
  constexpr double kTol = 1e-9;

  while (next < times.size()) {
    const double target = times[next];
    KrylovSubspace k(apply, psi, krylov_dim_);
    const double n_now = psi.norm();
    double tau = std::min(dt, target - t);
    bool lands = tau >= target - t;
    int shrinks = 0;
    while (!k.invariant() && k.error_estimate(tau) > kTol * n_now) {
      tau *= 0.5;
      lands = false;
      if (++shrinks > 60) throw NumericalError("Krylov step collapsed at t=" + std::to_string(t));
    }
    ++out.steps;
    const double n_end = k.propagated_norm(tau);
    if (n_end * n_end <= threshold) {
      // Locate the jump time inside the step; the norm decreases monotonically.
      double lo = 0.0, hi = tau;
      for (int it = 0; it < 60 && hi - lo > 1e-14 * std::max(1.0, t); ++it) {
        const double mid = 0.5 * (lo + hi);
        const double nm = k.propagated_norm(mid);
        (nm * nm > threshold ? lo : hi) = mid;
      }
      psi = k.propagate(hi);
      t += hi;
      std::vector<double> weights(jumps_.size());
      std::vector<CVector> candidates(jumps_.size());
      double total = 0.0;
      for (std::size_t j = 0; j < jumps_.size(); ++j) {
        candidates[j] = jumps_[j] * psi;
        weights[j] = candidates[j].squaredNorm();
        total += weights[j];
      }
      if (total > 0.0) {
        double pick = uni(rng) * total;
        std::size_t chosen = jumps_.size() - 1;
        for (std::size_t j = 0; j < jumps_.size(); ++j) {
          if (pick < weights[j]) {
            chosen = j;
            break;
          }
          pick -= weights[j];
        }
        psi = candidates[chosen] / std::sqrt(weights[chosen]);
        ++out.jumps;
      } else {
        psi /= psi.norm();
      }
      threshold = draw();
    } else {
      psi = k.propagate(tau);
      t = lands ? target : t + tau;
      if (lands) record(psi, out, next++);
      if (shrinks == 0 && !lands) dt = std::min(dt * 1.5, 10.0 * dt);
      if (shrinks > 0) dt = tau;
    }
  }
  return out;
}

void run_ensemble(const McwfEngine& engine, const Ket& psi0, std::span<const double> times, int n_traj,
                  std::uint64_t seed, int workers, const std::function<void(int, const McwfSamples&)>& consume) {
  if (n_traj < 1) throw UsageError("n_traj must be >= 1");
  const int nw = std::max(1, std::min(resolve_workers(workers), n_traj));
  constexpr int kChunk = 64;
  for (int base = 0; base < n_traj; base += kChunk) {
    const int count = std::min(kChunk, n_traj - base);
    std::vector<McwfSamples> results(static_cast<std::size_t>(count));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    auto work = [&](int w) {
      for (int i = w; i < count; i += nw) {
        try {
          results[static_cast<std::size_t>(i)] =
              engine.run(psi0, times, stream_seed(seed, static_cast<std::uint64_t>(base + i)));
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    };
    if (nw == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < std::min(nw, count); ++w) pool.emplace_back(work, w);
      for (auto& th : pool) th.join();
    }
    for (int i = 0; i < count; ++i) {
      if (errors[static_cast<std::size_t>(i)]) std::rethrow_exception(errors[static_cast<std::size_t>(i)]);
      consume(base + i, results[static_cast<std::size_t>(i)]);
    }
  }
}

}  // namespace detail

Trajectory evolve_trajectories(const Ket& psi0, const LinOp& h, std::span<const Collapse> collapses,
                               const EvolveSpec& spec, std::span<const Observable> observables) {
  EvolveSpec s = spec;
  s.method = EvolveMethod::Trajectories;
  s.validate();
  if (psi0.space.dimension() > kPureStateDimCap) {
    throw CapacityError("trajectory dimension " + std::to_string(psi0.space.dimension()) + " exceeds the cap");
  }
  const detail::McwfEngine engine(h, collapses, observables, spec.reduced_modes);
  const std::vector<double> times = s.record_times();
  const std::size_t nt = times.size();
  const std::size_t no = observables.size();

  std::vector<std::vector<double>> sum(no, std::vector<double>(nt, 0.0)), sumsq = sum;
  std::vector<std::vector<CMatrix>> rsum(spec.reduced_modes.size(), std::vector<CMatrix>(nt));
  std::size_t steps = 0;
  detail::run_ensemble(engine, psi0, times, s.n_traj, s.seed, s.workers,
                       [&](int, const detail::McwfSamples& r) {
                         for (std::size_t i = 0; i < no; ++i) {
                           for (std::size_t k = 0; k < nt; ++k) {
                             sum[i][k] += r.values[i][k];
                             sumsq[i][k] += r.values[i][k] * r.values[i][k];
                           }
                         }
                         for (std::size_t m = 0; m < rsum.size(); ++m) {
                           for (std::size_t k = 0; k < nt; ++k) {
                             if (rsum[m][k].size() == 0) {
                               rsum[m][k] = r.reduced[m][k];
                             } else {
                               rsum[m][k] += r.reduced[m][k];
                             }
                           }
                         }
                         steps += r.steps;
                       });

  Trajectory out;
  out.method = "trajectories";
  out.n_traj = s.n_traj;
  out.times = times;
  out.steps = steps;
  const double n = s.n_traj;
  for (std::size_t i = 0; i < no; ++i) {
    out.names.push_back(observables[i].name);
    std::vector<double> mean(nt), se(nt);
    for (std::size_t k = 0; k < nt; ++k) {
      mean[k] = sum[i][k] / n;
      const double var = n > 1 ? std::max(0.0, (sumsq[i][k] - n * mean[k] * mean[k]) / (n - 1)) : 0.0;
      se[k] = std::sqrt(var / n);
    }
    out.values.push_back(std::move(mean));
    out.std_errors.push_back(std::move(se));
  }
  for (std::size_t m = 0; m < rsum.size(); ++m) {
    const CompositeSpace sub = CompositeSpace::single_mode(psi0.space.dim(spec.reduced_modes[m]), spec.reduced_modes[m]);
    auto& dst = out.reduced[spec.reduced_modes[m]];
    for (std::size_t k = 0; k < nt; ++k) dst.push_back(DensityOp{sub, rsum[m][k] / n});
  }
  // Ensemble states are convex mixtures of pure states; the dense-run
  // invariants are not tracked here.
  out.invariants.min_eigenvalue = std::numeric_limits<double>::quiet_NaN();
  return out;
}

Trajectory evolve(const Ket& psi0, const LinOp& h, std::span<const Collapse> collapses, const EvolveSpec& spec,
                  std::span<const Observable> observables) {
  if (spec.method == EvolveMethod::Trajectories) return evolve_trajectories(psi0, h, collapses, spec, observables);
  return evolve_dense(nullptr, &psi0, h, collapses, spec, observables);
}

// ---------------------------------------------------------------------------
// Kerr oracle and analytic cats

Ket kerr_oracle(cplx alpha0, double chi, double t, int cutoff) {
  if (cutoff < 1) throw UsageError("cutoff must be >= 1");
  CVector amp = coherent_amplitudes(alpha0, cutoff);
  for (int n = 0; n < cutoff; ++n) {
    const double nn = static_cast<double>(n);
    // n^2 - n grows fast; reduce the phase before exponentiating.
    const double phase = std::remainder(t * chi * (nn * nn - nn), 2.0 * std::numbers::pi);
    amp(n) *= std::exp(-kI * phase);
  }
  Ket k{CompositeSpace::single_mode(cutoff), amp};
  k.normalize();
  return k;
}

Ket analytic_cat(CatKind kind, cplx alpha0, int cutoff) {
  if (cutoff < 1) throw UsageError("cutoff must be >= 1");
  using std::numbers::pi;
  CVector amp;
  if (kind == CatKind::TwoComponent) {
    amp = (std::exp(kI * (pi / 4)) * coherent_amplitudes(-kI * alpha0, cutoff) +
           std::exp(-kI * (pi / 4)) * coherent_amplitudes(kI * alpha0, cutoff)) /
          std::sqrt(2.0);
  } else {
    const cplx w = std::exp(-kI * (pi / 3));
    const cplx c1 = (1.0 - 2.0 * w) / 3.0;
    const cplx c2 = (1.0 + w) / 3.0;
    const cplx c3 = c2;
    amp = c1 * coherent_amplitudes(alpha0 * std::exp(-kI * (2 * pi / 3)), cutoff) +
          c2 * coherent_amplitudes(alpha0, cutoff) +
          c3 * coherent_amplitudes(alpha0 * std::exp(kI * (2 * pi / 3)), cutoff);
  }
  Ket k{CompositeSpace::single_mode(cutoff), amp};
  k.normalize();
  return k;
}

double overlap_fidelity(const Ket& a, const Ket& b) {
  if (a.amplitudes.size() != b.amplitudes.size()) throw DimensionError("kets of different dimension");
  const double na = a.amplitudes.squaredNorm(), nb = b.amplitudes.squaredNorm();
  if (na == 0.0 || nb == 0.0) throw UsageError("fidelity of a zero vector");
  return std::norm(a.amplitudes.dot(b.amplitudes)) / (na * nb);
}

}  // namespace topocat
