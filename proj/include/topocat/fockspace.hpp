#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <complex>
#include <compare>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace topocat {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using SparseOp = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

// Hilbert-dimension caps. Density matrices cost dim^2, pure states dim.
inline constexpr std::size_t kPureStateDimCap = 10'000'000;
inline constexpr std::size_t kDensityDimCap = 200'000;

enum class Chirality { CW, CCW };

struct ModeId {
  int cavity = 1;  // 1-based
  Chirality chirality = Chirality::CW;

  auto operator<=>(const ModeId&) const = default;
};

std::string to_string(Chirality c);
std::string to_string(const ModeId& m);

// Position of a mode in the canonical order (1,CW),(1,CCW),(2,CW),...
constexpr int canonical_position(const ModeId& m) {
  return 2 * (m.cavity - 1) + (m.chirality == Chirality::CW ? 0 : 1);
}
constexpr ModeId mode_at(int position) {
  return ModeId{position / 2 + 1, position % 2 == 0 ? Chirality::CW : Chirality::CCW};
}

// Local Fock cutoffs for the 2N modes, in canonical order.
class TruncationScheme {
 public:
  explicit TruncationScheme(std::vector<int> cutoffs, std::size_t dimension_cap = kPureStateDimCap);

  static TruncationScheme uniform(int cavities, int cutoff);
  static TruncationScheme edge_bulk(int cavities, int edge_cutoff, int bulk_cutoff);
  // ceil(|a0|^2 + 5|a0|) on both cavity-1 modes, `bulk_cutoff` elsewhere.
  static TruncationScheme for_edge_coherent(int cavities, double alpha0_abs, int bulk_cutoff = 4);
  static int coherent_cutoff(double alpha0_abs);

  int cutoff(const ModeId& m) const;
  const std::vector<int>& cutoffs() const { return cutoffs_; }
  std::size_t dimension_cap() const { return cap_; }
  TruncationScheme with_cap(std::size_t cap) const;

 private:
  std::vector<int> cutoffs_;
  std::size_t cap_;
};

// Ordered product of truncated Fock spaces. The first mode is the most
// significant digit of the flat index (Kronecker ordering).
class CompositeSpace {
 public:
  CompositeSpace() = default;
  CompositeSpace(std::vector<ModeId> modes, std::vector<int> dims,
                 std::size_t dimension_cap = kPureStateDimCap);

  static CompositeSpace single_mode(int cutoff, ModeId mode = {});

  std::size_t dimension() const { return total_; }
  std::size_t mode_count() const { return modes_.size(); }
  const std::vector<ModeId>& modes() const { return modes_; }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<std::size_t>& strides() const { return strides_; }

  bool contains(const ModeId& m) const;
  // Position in this space's mode list; IndexError if absent.
  std::size_t position(const ModeId& m) const;
  int dim(const ModeId& m) const { return dims_[position(m)]; }
  std::size_t stride(const ModeId& m) const { return strides_[position(m)]; }

  std::size_t flat_index(std::span<const int> occupations) const;
  std::vector<int> occupations(std::size_t flat) const;
  int occupation(std::size_t flat, std::size_t mode_pos) const {
    return static_cast<int>((flat / strides_[mode_pos]) % static_cast<std::size_t>(dims_[mode_pos]));
  }

  // Number of cavities when the space holds the full 2N-mode array.
  int cavity_count() const;
  // Subspace holding only `keep` (kept in this space's order).
  CompositeSpace subspace(std::span<const ModeId> keep) const;

  bool operator==(const CompositeSpace& o) const { return modes_ == o.modes_ && dims_ == o.dims_; }

 private:
  std::vector<ModeId> modes_;
  std::vector<int> dims_;
  std::vector<std::size_t> strides_;
  std::size_t total_ = 0;
};

CompositeSpace build_space(int cavities, const TruncationScheme& trunc);

// Sparse operator bound to a space.
class LinOp {
 public:
  LinOp() = default;
  LinOp(CompositeSpace space, SparseOp mat);
  static LinOp zero(const CompositeSpace& space);
  static LinOp identity(const CompositeSpace& space);

  const CompositeSpace& space() const { return space_; }
  const SparseOp& matrix() const { return mat_; }
  std::size_t dimension() const { return space_.dimension(); }

  LinOp adjoint() const;
  double hermiticity_error() const;  // max |H - H^dagger|
  double max_abs() const;
  bool is_zero() const { return max_abs() == 0.0; }
  cplx element(std::size_t row, std::size_t col) const { return mat_.coeff(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)); }

  LinOp& operator+=(const LinOp& o);
  LinOp& operator-=(const LinOp& o);
  LinOp& operator*=(cplx s);
  friend LinOp operator+(LinOp a, const LinOp& b) { return a += b; }
  friend LinOp operator-(LinOp a, const LinOp& b) { return a -= b; }
  friend LinOp operator*(LinOp a, cplx s) { return a *= s; }
  friend LinOp operator*(cplx s, LinOp a) { return a *= s; }
  friend LinOp operator*(const LinOp& a, const LinOp& b);

 private:
  CompositeSpace space_;
  SparseOp mat_;
};

struct Ket {
  CompositeSpace space;
  CVector amplitudes;

  double norm() const { return amplitudes.norm(); }
  Ket& normalize();
};

struct DensityOp {
  CompositeSpace space;
  CMatrix matrix;

  static DensityOp from_ket(const Ket& psi);
  cplx trace() const { return matrix.trace(); }
  double hermiticity_error() const;
  double min_eigenvalue() const;
  double purity() const;
  std::size_t dimension() const { return space.dimension(); }
};

enum class OpKind { Annihilate, Create, Number };

LinOp mode_operator(const CompositeSpace& space, const ModeId& mode, OpKind kind);

// e^{-|a|^2/2} a^n / sqrt(n!) for n < cutoff, not renormalized.
CVector coherent_amplitudes(cplx alpha, int cutoff);
Ket fock_ket(const CompositeSpace& space, std::span<const int> occupations);
Ket vacuum_ket(const CompositeSpace& space);
// Coherent state in `mode`, vacuum elsewhere; renormalized after truncation.
Ket coherent_ket(const CompositeSpace& space, const ModeId& mode, cplx alpha0);
// Tensor product of single-mode kets given in the space's mode order.
Ket product_ket(const CompositeSpace& space, std::span<const CVector> factors);

DensityOp partial_trace(const DensityOp& rho, std::span<const ModeId> keep);
DensityOp partial_trace(const Ket& psi, std::span<const ModeId> keep);
DensityOp reduced_mode_state(const DensityOp& rho, const ModeId& mode);
DensityOp reduced_mode_state(const Ket& psi, const ModeId& mode);

cplx expect(const LinOp& op, const DensityOp& rho);
cplx expect(const LinOp& op, const Ket& psi);

// Warnings (truncation too small, grid coverage, ...) go through this sink.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace topocat
