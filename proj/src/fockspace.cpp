#include "topocat/fockspace.hpp"

#include "topocat/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>
#include <sstream>

namespace topocat {

namespace {

std::mutex g_sink_mutex;
WarningSink g_sink;

}  // namespace

void set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_sink_mutex);
  g_sink = std::move(sink);
}

void warn(const std::string& message) {
  std::lock_guard lock(g_sink_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

std::string to_string(Chirality c) { return c == Chirality::CW ? "CW" : "CCW"; }

std::string to_string(const ModeId& m) {
  return "(" + std::to_string(m.cavity) + "," + to_string(m.chirality) + ")";
}

// ---------------------------------------------------------------------------
// TruncationScheme

TruncationScheme::TruncationScheme(std::vector<int> cutoffs, std::size_t dimension_cap)
    : cutoffs_(std::move(cutoffs)), cap_(dimension_cap) {
  if (cutoffs_.empty() || cutoffs_.size() % 2 != 0) {
    throw UsageError("truncation needs two cutoffs per cavity, got " + std::to_string(cutoffs_.size()));
  }
  for (std::size_t i = 0; i < cutoffs_.size(); ++i) {
    if (cutoffs_[i] < 1) {
      throw UsageError("cutoff of mode " + to_string(mode_at(static_cast<int>(i))) + " is " +
                       std::to_string(cutoffs_[i]) + "; must be >= 1");
    }
  }
}

TruncationScheme TruncationScheme::uniform(int cavities, int cutoff) {
  if (cavities < 1) throw UsageError("cavity count must be >= 1");
  return TruncationScheme(std::vector<int>(2 * static_cast<std::size_t>(cavities), cutoff));
}

TruncationScheme TruncationScheme::edge_bulk(int cavities, int edge_cutoff, int bulk_cutoff) {
  if (cavities < 1) throw UsageError("cavity count must be >= 1");
  std::vector<int> c(2 * static_cast<std::size_t>(cavities), bulk_cutoff);
  c[0] = edge_cutoff;
  c[1] = edge_cutoff;
  return TruncationScheme(std::move(c));
}

int TruncationScheme::coherent_cutoff(double alpha0_abs) {
  return std::max(1, static_cast<int>(std::ceil(alpha0_abs * alpha0_abs + 5.0 * alpha0_abs - 1e-12)));
}

TruncationScheme TruncationScheme::for_edge_coherent(int cavities, double alpha0_abs, int bulk_cutoff) {
  return edge_bulk(cavities, coherent_cutoff(alpha0_abs), bulk_cutoff);
}

int TruncationScheme::cutoff(const ModeId& m) const {
  const int pos = canonical_position(m);
  if (m.cavity < 1 || pos >= static_cast<int>(cutoffs_.size())) {
    throw IndexError("mode " + to_string(m) + " not covered by truncation");
  }
  return cutoffs_[static_cast<std::size_t>(pos)];
}

TruncationScheme TruncationScheme::with_cap(std::size_t cap) const {
  TruncationScheme t = *this;
  t.cap_ = cap;
  return t;
}

// ---------------------------------------------------------------------------
// CompositeSpace

CompositeSpace::CompositeSpace(std::vector<ModeId> modes, std::vector<int> dims, std::size_t dimension_cap)
    : modes_(std::move(modes)), dims_(std::move(dims)) {
  if (modes_.empty() || modes_.size() != dims_.size()) {
    throw UsageError("space needs one dimension per mode");
  }
  std::vector<ModeId> sorted = modes_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw UsageError("duplicate mode in space");
  }
  // Overflow-safe product with an informative message.
  std::size_t total = 1;
  std::ostringstream product;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i] < 1) {
      throw UsageError("local dimension of mode " + to_string(modes_[i]) + " must be >= 1");
    }
    product << (i ? "*" : "") << dims_[i];
    const auto d = static_cast<std::size_t>(dims_[i]);
    if (total > dimension_cap / d + 1 || total * d > dimension_cap) {
      throw CapacityError("total dimension " + product.str() + (i + 1 < dims_.size() ? "*..." : "") +
                          " exceeds cap " + std::to_string(dimension_cap));
    }
    total *= d;
  }
  total_ = total;
  strides_.assign(dims_.size(), 1);
  for (std::size_t i = dims_.size() - 1; i-- > 0;) {
    strides_[i] = strides_[i + 1] * static_cast<std::size_t>(dims_[i + 1]);
  }
}

CompositeSpace CompositeSpace::single_mode(int cutoff, ModeId mode) {
  if (cutoff < 1) throw UsageError("cutoff must be >= 1");
  return CompositeSpace({mode}, {cutoff});
}

bool CompositeSpace::contains(const ModeId& m) const {
  return std::find(modes_.begin(), modes_.end(), m) != modes_.end();
}

std::size_t CompositeSpace::position(const ModeId& m) const {
  auto it = std::find(modes_.begin(), modes_.end(), m);
  if (it == modes_.end()) throw IndexError("mode " + to_string(m) + " not in space");
  return static_cast<std::size_t>(it - modes_.begin());
}

std::size_t CompositeSpace::flat_index(std::span<const int> occupations) const {
  if (occupations.size() != dims_.size()) throw UsageError("multi-index length mismatch");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (occupations[i] < 0 || occupations[i] >= dims_[i]) {
      throw IndexError("occupation " + std::to_string(occupations[i]) + " out of range for mode " +
                       to_string(modes_[i]));
    }
    flat += static_cast<std::size_t>(occupations[i]) * strides_[i];
  }
  return flat;
}

std::vector<int> CompositeSpace::occupations(std::size_t flat) const {
  if (flat >= total_) throw IndexError("flat index out of range");
  std::vector<int> occ(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) occ[i] = occupation(flat, i);
  return occ;
}

int CompositeSpace::cavity_count() const {
  int n = 0;
  for (const auto& m : modes_) n = std::max(n, m.cavity);
  return n;
}

CompositeSpace CompositeSpace::subspace(std::span<const ModeId> keep) const {
  if (keep.empty()) throw UsageError("keep set must be nonempty");
  std::vector<ModeId> modes;
  std::vector<int> dims;
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), modes_[i]) != keep.end()) {
      modes.push_back(modes_[i]);
      dims.push_back(dims_[i]);
    }
  }
  for (const auto& k : keep) position(k);  // validates membership
  return CompositeSpace(std::move(modes), std::move(dims));
}

CompositeSpace build_space(int cavities, const TruncationScheme& trunc) {
  if (cavities < 1) throw UsageError("cavity count must be >= 1");
  if (trunc.cutoffs().size() != 2 * static_cast<std::size_t>(cavities)) {
    throw UsageError("truncation covers " + std::to_string(trunc.cutoffs().size() / 2) + " cavities, expected " +
                     std::to_string(cavities));
  }
  std::vector<ModeId> modes;
  for (int p = 0; p < 2 * cavities; ++p) modes.push_back(mode_at(p));
  return CompositeSpace(std::move(modes), trunc.cutoffs(), trunc.dimension_cap());
}

// ---------------------------------------------------------------------------
// LinOp

LinOp::LinOp(CompositeSpace space, SparseOp mat) : space_(std::move(space)), mat_(std::move(mat)) {
  const auto d = static_cast<Eigen::Index>(space_.dimension());
  if (mat_.rows() != d || mat_.cols() != d) {
    throw DimensionError("operator is " + std::to_string(mat_.rows()) + "x" + std::to_string(mat_.cols()) +
                         " on a space of dimension " + std::to_string(d));
  }
  mat_.makeCompressed();
}

LinOp LinOp::zero(const CompositeSpace& space) {
  const auto d = static_cast<Eigen::Index>(space.dimension());
  return LinOp(space, SparseOp(d, d));
}

LinOp LinOp::identity(const CompositeSpace& space) {
  const auto d = static_cast<Eigen::Index>(space.dimension());
  SparseOp m(d, d);
  m.setIdentity();
  return LinOp(space, std::move(m));
}

LinOp LinOp::adjoint() const { return LinOp(space_, SparseOp(mat_.adjoint())); }

double LinOp::hermiticity_error() const {
  SparseOp diff = mat_ - SparseOp(mat_.adjoint());
  double err = 0.0;
  for (Eigen::Index k = 0; k < diff.outerSize(); ++k) {
    for (SparseOp::InnerIterator it(diff, k); it; ++it) err = std::max(err, std::abs(it.value()));
  }
  return err;
}

double LinOp::max_abs() const {
  double m = 0.0;
  for (Eigen::Index k = 0; k < mat_.outerSize(); ++k) {
    for (SparseOp::InnerIterator it(mat_, k); it; ++it) m = std::max(m, std::abs(it.value()));
  }
  return m;
}

LinOp& LinOp::operator+=(const LinOp& o) {
  if (!(space_ == o.space_)) throw DimensionError("adding operators on different spaces");
  mat_ += o.mat_;
  mat_.prune(cplx(0.0));
  return *this;
}

LinOp& LinOp::operator-=(const LinOp& o) {
  if (!(space_ == o.space_)) throw DimensionError("subtracting operators on different spaces");
  mat_ -= o.mat_;
  mat_.prune(cplx(0.0));
  return *this;
}

LinOp& LinOp::operator*=(cplx s) {
  mat_ *= s;
  mat_.prune(cplx(0.0));
  return *this;
}

LinOp operator*(const LinOp& a, const LinOp& b) {
  if (!(a.space_ == b.space_)) throw DimensionError("multiplying operators on different spaces");
  SparseOp p = (a.mat_ * b.mat_).pruned();
  return LinOp(a.space_, std::move(p));
}

LinOp mode_operator(const CompositeSpace& space, const ModeId& mode, OpKind kind) {
  const std::size_t pos = space.position(mode);
  const std::size_t stride = space.strides()[pos];
  const auto d = static_cast<Eigen::Index>(space.dimension());
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(space.dimension());
  for (std::size_t i = 0; i < space.dimension(); ++i) {
    const int n = space.occupation(i, pos);
    const auto row = static_cast<Eigen::Index>(i);
    switch (kind) {
      case OpKind::Number:
        if (n > 0) trip.emplace_back(row, row, static_cast<double>(n));
        break;
      case OpKind::Annihilate:  // <n-1| a |n> = sqrt(n); row i holds n, column i + stride holds n + 1
        if (n + 1 < space.dims()[pos]) {
          trip.emplace_back(row, static_cast<Eigen::Index>(i + stride), std::sqrt(static_cast<double>(n + 1)));
        }
        break;
      case OpKind::Create:
        if (n > 0) trip.emplace_back(row, static_cast<Eigen::Index>(i - stride), std::sqrt(static_cast<double>(n)));
        break;
    }
  }
  SparseOp m(d, d);
  m.setFromTriplets(trip.begin(), trip.end());
  return LinOp(space, std::move(m));
}

// ---------------------------------------------------------------------------
// States

Ket& Ket::normalize() {
  const double n = amplitudes.norm();
  if (n == 0.0) throw NumericalError("cannot normalize a zero ket");
  amplitudes /= n;
  return *this;
}

DensityOp DensityOp::from_ket(const Ket& psi) {
  return DensityOp{psi.space, psi.amplitudes * psi.amplitudes.adjoint()};
}

double DensityOp::hermiticity_error() const { return (matrix - matrix.adjoint()).cwiseAbs().maxCoeff(); }

double DensityOp::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(matrix, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double DensityOp::purity() const {
  // Tr rho^2 = sum |rho_ij|^2 for Hermitian rho
  return matrix.cwiseAbs2().sum();
}

CVector coherent_amplitudes(cplx alpha, int cutoff) {
  if (cutoff < 1) throw UsageError("cutoff must be >= 1");
  CVector v(cutoff);
  v(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n < cutoff; ++n) v(n) = v(n - 1) * alpha / std::sqrt(static_cast<double>(n));
  return v;
}

Ket fock_ket(const CompositeSpace& space, std::span<const int> occupations) {
  Ket k{space, CVector::Zero(static_cast<Eigen::Index>(space.dimension()))};
  k.amplitudes(static_cast<Eigen::Index>(space.flat_index(occupations))) = 1.0;
  return k;
}

Ket vacuum_ket(const CompositeSpace& space) {
  std::vector<int> zeros(space.mode_count(), 0);
  return fock_ket(space, zeros);
}

Ket product_ket(const CompositeSpace& space, std::span<const CVector> factors) {
  if (factors.size() != space.mode_count()) throw UsageError("one factor per mode required");
  CVector v = CVector::Ones(1);
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (factors[m].size() != space.dims()[m]) throw DimensionError("factor length differs from mode cutoff");
    CVector next(v.size() * factors[m].size());
    for (Eigen::Index i = 0; i < v.size(); ++i) next.segment(i * factors[m].size(), factors[m].size()) = v(i) * factors[m];
    v = std::move(next);
  }
  return Ket{space, std::move(v)};
}

Ket coherent_ket(const CompositeSpace& space, const ModeId& mode, cplx alpha0) {
  const std::size_t pos = space.position(mode);
  const int cutoff = space.dims()[pos];
  const double a = std::abs(alpha0);
  if (a * a + 5.0 * a > cutoff + 1e-12) {
    warn("coherent amplitude |alpha0|=" + std::to_string(a) + " needs cutoff >= " +
         std::to_string(TruncationScheme::coherent_cutoff(a)) + " on mode " + to_string(mode) + ", have " +
         std::to_string(cutoff));
  }
  std::vector<CVector> factors;
  for (std::size_t m = 0; m < space.mode_count(); ++m) {
    if (m == pos) {
      factors.push_back(coherent_amplitudes(alpha0, cutoff));
    } else {
      CVector vac = CVector::Zero(space.dims()[m]);
      vac(0) = 1.0;
      factors.push_back(std::move(vac));
    }
  }
  Ket k = product_ket(space, factors);
  k.normalize();
  return k;
}

// ---------------------------------------------------------------------------
// Partial traces

namespace {

struct Split {
  CompositeSpace kept;
  std::vector<std::size_t> kept_index;    // flat -> kept flat
  std::vector<std::size_t> traced_index;  // flat -> traced flat
  std::size_t traced_dim = 1;
};

Split split_space(const CompositeSpace& space, std::span<const ModeId> keep) {
  if (keep.empty()) throw UsageError("partial trace: keep set must be nonempty");
  Split s{space.subspace(keep), {}, {}, 1};
  std::vector<bool> is_kept(space.mode_count(), false);
  for (const auto& m : keep) is_kept[space.position(m)] = true;
  for (std::size_t m = 0; m < space.mode_count(); ++m) {
    if (!is_kept[m]) s.traced_dim *= static_cast<std::size_t>(space.dims()[m]);
  }
  s.kept_index.resize(space.dimension());
  s.traced_index.resize(space.dimension());
  for (std::size_t i = 0; i < space.dimension(); ++i) {
    std::size_t k = 0, t = 0;
    for (std::size_t m = 0; m < space.mode_count(); ++m) {
      const auto n = static_cast<std::size_t>(space.occupation(i, m));
      if (is_kept[m]) {
        k = k * static_cast<std::size_t>(space.dims()[m]) + n;
      } else {
        t = t * static_cast<std::size_t>(space.dims()[m]) + n;
      }
    }
    s.kept_index[i] = k;
    s.traced_index[i] = t;
  }
  return s;
}

}  // namespace

DensityOp partial_trace(const DensityOp& rho, std::span<const ModeId> keep) {
  const Split s = split_space(rho.space, keep);
  const auto dk = static_cast<Eigen::Index>(s.kept.dimension());
  // Group flat indices by their traced part.
  std::vector<std::vector<std::size_t>> groups(s.traced_dim);
  for (std::size_t i = 0; i < rho.space.dimension(); ++i) groups[s.traced_index[i]].push_back(i);
  CMatrix out = CMatrix::Zero(dk, dk);
  for (const auto& g : groups) {
    for (std::size_t c : g) {
      const auto kc = static_cast<Eigen::Index>(s.kept_index[c]);
      for (std::size_t r : g) {
        out(static_cast<Eigen::Index>(s.kept_index[r]), kc) +=
            rho.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      }
    }
  }
  return DensityOp{s.kept, std::move(out)};
}

DensityOp partial_trace(const Ket& psi, std::span<const ModeId> keep) {
  const Split s = split_space(psi.space, keep);
  CMatrix amp = CMatrix::Zero(static_cast<Eigen::Index>(s.kept.dimension()), static_cast<Eigen::Index>(s.traced_dim));
  for (std::size_t i = 0; i < psi.space.dimension(); ++i) {
    amp(static_cast<Eigen::Index>(s.kept_index[i]), static_cast<Eigen::Index>(s.traced_index[i])) =
        psi.amplitudes(static_cast<Eigen::Index>(i));
  }
  return DensityOp{s.kept, amp * amp.adjoint()};
}

DensityOp reduced_mode_state(const DensityOp& rho, const ModeId& mode) {
  const ModeId keep[] = {mode};
  return partial_trace(rho, keep);
}

DensityOp reduced_mode_state(const Ket& psi, const ModeId& mode) {
  const ModeId keep[] = {mode};
  return partial_trace(psi, keep);
}

cplx expect(const LinOp& op, const DensityOp& rho) {
  if (!(op.space() == rho.space)) throw DimensionError("expectation on mismatched spaces");
  // Tr(O rho) = sum_ij O_ij rho_ji
  cplx acc = 0.0;
  const SparseOp& m = op.matrix();
  for (Eigen::Index i = 0; i < m.outerSize(); ++i) {
    for (SparseOp::InnerIterator it(m, i); it; ++it) acc += it.value() * rho.matrix(it.col(), i);
  }
  return acc;
}

cplx expect(const LinOp& op, const Ket& psi) {
  if (!(op.space() == psi.space)) throw DimensionError("expectation on mismatched spaces");
  return psi.amplitudes.dot(op.matrix() * psi.amplitudes) / psi.amplitudes.squaredNorm();
}

}  // namespace topocat
