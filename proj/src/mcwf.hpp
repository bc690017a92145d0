#pragma once

// Monte-Carlo wavefunction engine shared by time evolution and steady-state
// averaging. Internal header.

#include "topocat/dynamics.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace topocat::detail {

struct McwfSamples {
  std::vector<std::vector<double>> values;    // [observable][record]
  std::vector<std::vector<CMatrix>> reduced;  // [mode][record]
  std::size_t jumps = 0;
  std::size_t steps = 0;
};

class McwfEngine {
 public:
  McwfEngine(const LinOp& h, std::span<const Collapse> collapses, std::span<const Observable> observables,
             std::vector<ModeId> reduced_modes);

  // One trajectory from psi0, sampled at `times` (first may be 0).
  McwfSamples run(const Ket& psi0, std::span<const double> times, std::uint64_t stream_seed) const;

  const std::vector<ModeId>& reduced_modes() const { return reduced_modes_; }
  std::size_t observable_count() const { return observables_.size(); }

 private:
  void record(const CVector& psi, McwfSamples& out, std::size_t slot) const;

  CompositeSpace space_;
  SparseOp heff_;
  std::vector<SparseOp> jumps_;  // sqrt(2 rate) c
  std::vector<Observable> observables_;
  std::vector<ModeId> reduced_modes_;
  int krylov_dim_ = 30;
};

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

// Runs trajectories 0..n-1 on a worker pool and hands each result to
// `consume` in index order, so reductions do not depend on the worker count.
void run_ensemble(const McwfEngine& engine, const Ket& psi0, std::span<const double> times, int n_traj,
                  std::uint64_t seed, int workers,
                  const std::function<void(int, const McwfSamples&)>& consume);

}  // namespace topocat::detail
