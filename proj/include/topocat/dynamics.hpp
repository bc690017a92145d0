#pragma once

#include "topocat/errors.hpp"
#include "topocat/fockspace.hpp"
#include "topocat/model.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace topocat {

enum class EvolveMethod { DenseMaster, Trajectories };

struct EvolveSpec {
  double t_final = 1.0;
  double rtol = 1e-8;
  double atol = 1e-10;
  double record_stride = 0.0;  // <= 0: record only t = 0 and t_final
  EvolveMethod method = EvolveMethod::DenseMaster;
  int n_traj = 100;
  std::uint64_t seed = 12345;
  int workers = 0;  // 0: TOPOCAT_WORKERS or hardware concurrency
  // Single-mode reduced states stored at every record.
  std::vector<ModeId> reduced_modes;
  // Dense runs: Hermiticity/trace/positivity/purity checked at every record.
  bool check_invariants = true;
  // Positivity above this dimension is certified by a shifted Cholesky
  // factorization instead of a full eigendecomposition.
  std::size_t exact_eigen_max_dim = 1200;
  // Dense runs only: keep product states with at most this many photons in
  // total (< 0 keeps the whole product space). Exact for number-conserving
  // H with loss; only the initial-state tail above the cap is dropped.
  int max_total_photons = -1;

  void validate() const;
  std::vector<double> record_times() const;
};

struct Observable {
  std::string name;
  LinOp op;
};

struct InvariantReport {
  double max_trace_drift = 0.0;
  double max_hermiticity_error = 0.0;
  double min_eigenvalue = 0.0;  // smallest exact eigenvalue seen; NaN when only Cholesky-certified
  double max_purity = 0.0;
  bool positive = true;

  bool holds() const {
    return max_trace_drift < 1e-8 && max_hermiticity_error < 1e-9 && positive && max_purity <= 1.0 + 1e-9;
  }
};

struct Trajectory {
  std::string method;  // "dense_master" or "trajectories"
  int n_traj = 0;
  std::vector<double> times;
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;      // [observable][time], real part
  std::vector<std::vector<double>> std_errors;  // zeros for dense runs
  std::map<ModeId, std::vector<DensityOp>> reduced;
  InvariantReport invariants;
  std::size_t steps = 0;

  const std::vector<double>& series(const std::string& name) const;
  const std::vector<double>& errors(const std::string& name) const;
};

// Vectorization-free Lindblad generator
//   L(rho) = -i[H, rho] + sum_k 2 rate_k (c rho c^dag - 1/2 {c^dag c, rho}).
class Liouvillian {
 public:
  Liouvillian(const LinOp& h, std::span<const Collapse> collapses);
  // Raw matrices: jumps are (c, rate) pairs entering as 2 rate D[c].
  Liouvillian(const SparseOp& h, const std::vector<std::pair<SparseOp, double>>& jumps);

  std::size_t dimension() const { return dim_; }
  // Valid for any square rho.
  void apply(const CMatrix& rho, CMatrix& out) const;
  // Faster path that assumes rho is Hermitian; output is exactly Hermitian.
  void apply_hermitian(const CMatrix& rho, CMatrix& out) const;

  const SparseOp& effective_hamiltonian() const { return heff_; }

 private:
  void add_jumps(const CMatrix& rho, CMatrix& out) const;

  // One stored diagonal: (A x)_i += w_i x_{i+offset} for lo <= i < hi.
  struct Diagonal {
    Eigen::Index offset = 0;
    Eigen::Index lo = 0, hi = 0;
    CVector w;
  };
  struct Jump {
    double rate2 = 0.0;  // 2 * rate
    SparseOp op;
    std::optional<Diagonal> diag;  // set when op has a single stored diagonal
    // Otherwise, when every row and column holds at most one entry:
    // row[k] picks up w[k] x_{src[k]}.
    std::vector<Eigen::Index> row, src;
    CVector w;
  };

  std::size_t dim_ = 0;
  SparseOp heff_;  // H - i sum_k rate_k c^dag c
  std::vector<Diagonal> heff_diagonals_;  // empty: use the sparse product
  std::vector<Jump> jumps_;
  mutable CMatrix work_;  // not shareable across threads
};

// Integration failure that keeps everything recorded before it happened.
class EvolutionFailure : public NumericalError {
 public:
  EvolutionFailure(const std::string& what, Trajectory partial)
      : NumericalError(what), partial_(std::make_shared<Trajectory>(std::move(partial))) {}
  const Trajectory& partial() const { return *partial_; }

 private:
  std::shared_ptr<Trajectory> partial_;
};

CMatrix liouvillian_apply(const LinOp& h, std::span<const Collapse> collapses, const DensityOp& rho);

Trajectory evolve_master(const DensityOp& rho0, const LinOp& h, std::span<const Collapse> collapses,
                         const EvolveSpec& spec, std::span<const Observable> observables = {});

// Monte-Carlo wavefunction unraveling; ensemble means with standard errors.
// Bit-reproducible for a fixed seed regardless of worker count.
Trajectory evolve_trajectories(const Ket& psi0, const LinOp& h, std::span<const Collapse> collapses,
                               const EvolveSpec& spec, std::span<const Observable> observables = {});

// Dispatches on spec.method; dense runs start from |psi0><psi0|.
Trajectory evolve(const Ket& psi0, const LinOp& h, std::span<const Collapse> collapses, const EvolveSpec& spec,
                  std::span<const Observable> observables = {});

// ---------------------------------------------------------------------------
// Steady states

enum class SteadyMethod { Auto, Direct, Evolution, Trajectories };

struct SteadyOptions {
  SteadyMethod method = SteadyMethod::Auto;
  std::size_t direct_max_dim = 64;      // sparse LU on the dim^2 vectorized generator
  std::size_t evolution_max_dim = 400;  // dense long-time evolution
  double evolution_time = 20.0;         // in units of 1/kappa
  double settle_tolerance = 1e-7;       // evolution stops when rho moves less than this per 1/kappa
  double tolerance = 1e-8;              // residual bound for direct solves
  // Trajectory time averaging
  int n_traj = 24;
  double burn_in = 8.0;
  double average_time = 40.0;
  double sample_dt = 0.05;
  std::uint64_t seed = 2024;
  int workers = 0;
  std::vector<ModeId> reduced_modes;
};

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct SteadyStateResult {
  std::optional<DensityOp> rho;  // absent for trajectory averages
  double residual = 0.0;         // ||L(rho)||_F; NaN for trajectory averages
  SteadyMethod method = SteadyMethod::Direct;
  std::map<std::string, Estimate> observables;
  std::map<ModeId, DensityOp> reduced;
};

std::string to_string(SteadyMethod m);

SteadyStateResult steady_state(const LinOp& h_rot, std::span<const Collapse> collapses,
                               std::span<const Observable> observables = {}, const SteadyOptions& opt = {});

struct SpectrumPoint {
  double delta = 0.0;
  double n = 0.0;
  double std_error = 0.0;
  std::string method;
  std::string error;  // nonempty when the solver failed at this point
};

// <n_{1,dir}>(Delta) of the driven edge cavity.
std::vector<SpectrumPoint> excitation_spectrum(const CompositeSpace& space, ArrayParams p, Chirality direction,
                                               std::span<const double> delta_grid, const SteadyOptions& opt = {});

// ---------------------------------------------------------------------------
// Single-mode Kerr oracle and analytic cats

// e^{-|a|^2/2} a^n/sqrt(n!) e^{-i t chi (n^2 - n)}, renormalized.
Ket kerr_oracle(cplx alpha0, double chi, double t, int cutoff);

enum class CatKind { TwoComponent, ThreeComponent };

Ket analytic_cat(CatKind kind, cplx alpha0, int cutoff);

// |<a|b>|^2 for normalized kets, or <psi|rho|psi> for pure vs mixed.
double overlap_fidelity(const Ket& a, const Ket& b);

int resolve_workers(int requested);

}  // namespace topocat
