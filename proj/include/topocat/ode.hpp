#pragma once

// Adaptive Dormand-Prince 5(4) integrator for Eigen-valued states
// (vectors or matrices, real or complex).

#include "topocat/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>

namespace topocat {

struct OdeOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 0.0;  // 0: pick automatically
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 50'000'000;
};

struct OdeStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evaluations = 0;
};

namespace detail {

// Dormand & Prince (1980) coefficients.
struct DP5 {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                          a76 = 11.0 / 84;
  // error = (b5 - b4)
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
};

template <class State>
double scaled_rms(const State& err, const State& y0, const State& y1, double atol, double rtol) {
  const auto scale = atol + rtol * y0.array().abs().max(y1.array().abs());
  return std::sqrt((err.array().abs() / scale).square().mean());
}

}  // namespace detail

// Integrates y' = f(t, y) from t0 through every time in `outputs` (strictly
// increasing, all > t0), calling observer(t, y) at t0 and at each output.
// The step is clipped to land exactly on output times. f(t, y, dydt) must
// fully overwrite dydt. Throws NumericalError when the step collapses.
template <class State, class Rhs, class Observer>
OdeStats integrate_dopri5(Rhs&& f, double t0, State& y, std::span<const double> outputs, Observer&& observer,
                          const OdeOptions& opt = {}) {
  using T = detail::DP5;
  OdeStats stats;
  observer(t0, static_cast<const State&>(y));
  if (outputs.empty()) return stats;
  if (opt.rtol <= 0 || opt.atol <= 0) throw UsageError("integrator tolerances must be > 0");

  State k1 = State::Zero(y.rows(), y.cols()), k2 = k1, k3 = k1, k4 = k1, k5 = k1, k6 = k1, k7 = k1;
  State ytmp = k1;

  double t = t0;
  f(t, y, k1);
  ++stats.rhs_evaluations;

  double h = opt.initial_step;
  if (h <= 0.0) {
    // Hairer-Wanner starting step heuristic (first-order part).
    const double d0 = detail::scaled_rms(y, y, y, opt.atol, opt.rtol);
    const double d1 = detail::scaled_rms(k1, y, y, opt.atol, opt.rtol);
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::min(h, outputs.back() - t0);
  }

  double err_prev = 1e-4;
  std::size_t next = 0;
  while (next < outputs.size()) {
    const double target = outputs[next];
    if (!(target > t)) throw UsageError("output times must be strictly increasing and after t0");
    if (stats.accepted + stats.rejected >= opt.max_steps) {
      throw NumericalError("integrator exceeded " + std::to_string(opt.max_steps) + " steps at t=" + std::to_string(t));
    }
    h = std::min({h, opt.max_step});
    const double h_unclipped = h;
    bool lands = false;
    if (t + h >= target - 1e-14 * std::max(1.0, std::abs(target))) {
      h = target - t;
      lands = true;
    }
    if (h <= 1e-14 * std::max(1.0, std::abs(t))) {
      throw NumericalError("step size collapsed (stiffness) at t=" + std::to_string(t));
    }

    ytmp = y + h * (T::a21 * k1);
    f(t + T::c2 * h, ytmp, k2);
    ytmp = y + h * (T::a31 * k1 + T::a32 * k2);
    f(t + T::c3 * h, ytmp, k3);
    ytmp = y + h * (T::a41 * k1 + T::a42 * k2 + T::a43 * k3);
    f(t + T::c4 * h, ytmp, k4);
    ytmp = y + h * (T::a51 * k1 + T::a52 * k2 + T::a53 * k3 + T::a54 * k4);
    f(t + T::c5 * h, ytmp, k5);
    ytmp = y + h * (T::a61 * k1 + T::a62 * k2 + T::a63 * k3 + T::a64 * k4 + T::a65 * k5);
    f(t + h, ytmp, k6);
    ytmp = y + h * (T::a71 * k1 + T::a73 * k3 + T::a74 * k4 + T::a75 * k5 + T::a76 * k6);
    f(t + h, ytmp, k7);
    stats.rhs_evaluations += 6;

    // k2 is free now; reuse it for the error estimate.
    k2 = h * (T::e1 * k1 + T::e3 * k3 + T::e4 * k4 + T::e5 * k5 + T::e6 * k6 + T::e7 * k7);
    double err = detail::scaled_rms(k2, y, ytmp, opt.atol, opt.rtol);
    if (!std::isfinite(err)) err = 1e10;

    if (err <= 1.0) {
      ++stats.accepted;
      t = lands ? target : t + h;
      y.swap(ytmp);
      k1.swap(k7);  // FSAL
      // PI controller (Hairer-Wanner, beta = 0.04)
      const double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2 + 0.04 * 0.75) * std::pow(err_prev, 0.04);
      err_prev = std::max(err, 1e-4);
      const double hnew = h * std::clamp(fac, 0.2, 10.0);
      if (lands) {
        observer(t, static_cast<const State&>(y));
        ++next;
        // Do not let the clipped step shrink the natural step.
        h = std::max(hnew, h_unclipped);
      } else {
        h = hnew;
      }
    } else {
      ++stats.rejected;
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
    }
  }
  return stats;
}

}  // namespace topocat
