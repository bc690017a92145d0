#include "topocat/phasespace.hpp"

#include "topocat/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

namespace topocat {

namespace {

using std::numbers::pi;

void require_single_mode(const DensityOp& rho) {
  if (rho.space.mode_count() != 1) {
    throw UsageError("phase-space functions need a single-mode state, got " + std::to_string(rho.space.mode_count()) +
                     " modes");
  }
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * pi);
  if (a < -pi) a += 2.0 * pi;
  if (a >= pi) a -= 2.0 * pi;
  return a;
}

// Trapezoid weights along one axis.
Eigen::VectorXd trapezoid_weights(int n, double h) {
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, h);
  w(0) = w(n - 1) = 0.5 * h;
  return w;
}

class WignerKernel {
 public:
  explicit WignerKernel(const CMatrix& rho) : rho_(rho), m_(static_cast<int>(rho.rows())) {
    ratio_.assign(static_cast<std::size_t>(m_ * m_), 0.0);
    for (int a = 0; a < m_; ++a) {
      for (int b = a; b < m_; ++b) {
        ratio_[static_cast<std::size_t>(a * m_ + b)] =
            std::exp(0.5 * (std::lgamma(a + 1.0) - std::lgamma(b + 1.0)));
      }
    }
    lag_.resize(static_cast<std::size_t>(m_ * m_));
    pow_.resize(static_cast<std::size_t>(m_));
  }

  double operator()(cplx alpha) {
    const double b = 4.0 * std::norm(alpha);
    // lag_[k*m + j] = L_j^{(k)}(b)
    for (int k = 0; k < m_; ++k) {
      double* l = lag_.data() + k * m_;
      const int top = m_ - k;
      l[0] = 1.0;
      if (top > 1) l[1] = 1.0 + k - b;
      for (int j = 1; j + 1 < top; ++j) l[j + 1] = ((2.0 * j + 1.0 + k - b) * l[j] - (j + k) * l[j - 1]) / (j + 1.0);
    }
    pow_[0] = 1.0;
    for (int k = 1; k < m_; ++k) pow_[static_cast<std::size_t>(k)] = pow_[static_cast<std::size_t>(k - 1)] * (2.0 * alpha);
    double sum = 0.0;
    for (int m = 0; m < m_; ++m) {
      double term = rho_(m, m).real() * lag_[static_cast<std::size_t>(m)];
      for (int n = m + 1; n < m_; ++n) {
        const int k = n - m;
        term += 2.0 * (rho_(m, n) * pow_[static_cast<std::size_t>(k)]).real() *
                ratio_[static_cast<std::size_t>(m * m_ + n)] * lag_[static_cast<std::size_t>(k * m_ + m)];
      }
      sum += (m % 2 == 0 ? term : -term);
    }
    return (2.0 / pi) * std::exp(-0.5 * b) * sum;
  }

 private:
  const CMatrix& rho_;
  int m_;
  std::vector<double> ratio_;
  std::vector<double> lag_;
  std::vector<cplx> pow_;
};

// Second derivative along rows (axis 0) with 2nd-order one-sided edges.
Eigen::MatrixXd second_difference(const Eigen::MatrixXd& f, double h, int axis) {
  const Eigen::MatrixXd g = axis == 0 ? f : Eigen::MatrixXd(f.transpose());
  const Eigen::Index n = g.rows();
  Eigen::MatrixXd d(g.rows(), g.cols());
  const double h2 = h * h;
  for (Eigen::Index i = 1; i + 1 < n; ++i) d.row(i) = (g.row(i - 1) - 2.0 * g.row(i) + g.row(i + 1)) / h2;
  if (n >= 4) {
    d.row(0) = (2.0 * g.row(0) - 5.0 * g.row(1) + 4.0 * g.row(2) - g.row(3)) / h2;
    d.row(n - 1) = (2.0 * g.row(n - 1) - 5.0 * g.row(n - 2) + 4.0 * g.row(n - 3) - g.row(n - 4)) / h2;
  } else {
    d.row(0) = d.row(1);
    d.row(n - 1) = d.row(n - 2);
  }
  return axis == 0 ? d : Eigen::MatrixXd(d.transpose());
}

double macroscopicity_fd(const Eigen::MatrixXd& w, const PhaseGrid& g) {
  const Eigen::MatrixXd lap = second_difference(w, g.dx(), 0) + second_difference(w, g.dp(), 1);
  const Eigen::MatrixXd field = w.cwiseProduct(-0.25 * lap - w);
  const Eigen::VectorXd wx = trapezoid_weights(g.nx, g.dx());
  const Eigen::VectorXd wp = trapezoid_weights(g.np, g.dp());
  return 0.5 * pi * wx.dot(field * wp);
}

struct SimplexResult {
  std::array<double, 3> x{};
  double f = 0.0;
  bool converged = false;
  int evaluations = 0;
};

SimplexResult nelder_mead(const std::function<double(const std::array<double, 3>&)>& f, std::array<double, 3> x0,
                          std::array<double, 3> step, int max_eval, double tol) {
  constexpr int n = 3;
  std::array<std::array<double, 3>, n + 1> s;
  std::array<double, n + 1> fv;
  SimplexResult r;
  s[0] = x0;
  for (int i = 0; i < n; ++i) {
    s[i + 1] = x0;
    s[i + 1][i] += step[i];
  }
  for (int i = 0; i <= n; ++i) fv[i] = f(s[i]);
  r.evaluations = n + 1;
  std::array<int, n + 1> idx{0, 1, 2, 3};
  while (r.evaluations < max_eval) {
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    const int best = idx[0], worst = idx[n], second = idx[n - 1];
    double size = 0.0;
    for (int i = 1; i <= n; ++i) {
      for (int k = 0; k < n; ++k) size = std::max(size, std::abs(s[idx[i]][k] - s[best][k]));
    }
    if (fv[worst] - fv[best] <= tol * (std::abs(fv[best]) + tol) && size < 1e-8) {
      r.converged = true;
      break;
    }
    std::array<double, 3> c{};
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) c[k] += s[idx[i]][k] / n;
    }
    auto along = [&](double t) {
      std::array<double, 3> p;
      for (int k = 0; k < n; ++k) p[k] = c[k] + t * (s[worst][k] - c[k]);
      return p;
    };
    const auto xr = along(-1.0);
    const double fr = f(xr);
    ++r.evaluations;
    if (fr < fv[best]) {
      const auto xe = along(-2.0);
      const double fe = f(xe);
      ++r.evaluations;
      if (fe < fr) {
        s[worst] = xe;
        fv[worst] = fe;
      } else {
        s[worst] = xr;
        fv[worst] = fr;
      }
    } else if (fr < fv[second]) {
      s[worst] = xr;
      fv[worst] = fr;
    } else {
      const bool outside = fr < fv[worst];
      const auto xc = along(outside ? -0.5 : 0.5);
      const double fc = f(xc);
      ++r.evaluations;
      if (fc < (outside ? fr : fv[worst])) {
        s[worst] = xc;
        fv[worst] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          for (int k = 0; k < n; ++k) s[idx[i]][k] = s[best][k] + 0.5 * (s[idx[i]][k] - s[best][k]);
          fv[idx[i]] = f(s[idx[i]]);
          ++r.evaluations;
        }
      }
    }
  }
  int b = 0;
  for (int i = 1; i <= n; ++i) {
    if (fv[i] < fv[b]) b = i;
  }
  r.x = s[b];
  r.f = fv[b];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

void PhaseGrid::validate() const {
  if (!(x_max > x_min) || !(p_max > p_min)) throw UsageError("phase grid ranges must be nonempty");
  if (nx < 16 || np < 16) throw UsageError("phase grid needs at least 16 points per axis");
}

double WignerGrid::integrate(const Eigen::MatrixXd& field) const {
  const Eigen::VectorXd wx = trapezoid_weights(grid.nx, grid.dx());
  const Eigen::VectorXd wp = trapezoid_weights(grid.np, grid.dp());
  return wx.dot(field * wp);
}

double WignerGrid::integral() const { return integrate(values); }

WignerGrid wigner(const DensityOp& rho_mode, const PhaseGrid& grid) {
  require_single_mode(rho_mode);
  grid.validate();
  WignerGrid w;
  w.grid = grid;
  w.trace = rho_mode.trace().real();
  w.values.resize(grid.nx, grid.np);
  WignerKernel kernel(rho_mode.matrix);
  for (int j = 0; j < grid.np; ++j) {
    for (int i = 0; i < grid.nx; ++i) w.values(i, j) = kernel(cplx(grid.x(i), grid.p(j)));
  }
  return w;
}

double wigner_at(const DensityOp& rho_mode, cplx alpha) {
  require_single_mode(rho_mode);
  WignerKernel kernel(rho_mode.matrix);
  return kernel(alpha);
}

double negativity(const WignerGrid& w) {
  const double mass = w.integral();
  if (std::abs(mass - w.trace) > 1e-3) {
    std::ostringstream os;
    os << "Wigner grid captures " << mass << " of trace " << w.trace << "; negativity may be underestimated";
    warn(os.str());
  }
  const Eigen::MatrixXd neg = w.values.cwiseAbs() - w.values;
  return std::max(0.0, w.integrate(neg));
}

double macroscopicity(const WignerGrid& w) {
  const double value = macroscopicity_fd(w.values, w.grid);
  // Richardson-style estimate from the grid with every other point.
  const PhaseGrid& g = w.grid;
  if (g.nx % 2 == 1 && g.np % 2 == 1 && g.nx >= 33 && g.np >= 33) {
    PhaseGrid coarse = g;
    coarse.nx = (g.nx + 1) / 2;
    coarse.np = (g.np + 1) / 2;
    Eigen::MatrixXd wc(coarse.nx, coarse.np);
    for (int j = 0; j < coarse.np; ++j) {
      for (int i = 0; i < coarse.nx; ++i) wc(i, j) = w.values(2 * i, 2 * j);
    }
    const double err = std::abs(value - macroscopicity_fd(wc, coarse)) / 3.0;
    if (err > 0.01 * std::max(std::abs(value), 0.01)) {
      std::ostringstream os;
      os << "macroscopicity stencil error estimate " << err << " exceeds 1% of I=" << value << "; refine the grid";
      warn(os.str());
    }
  }
  return value;
}

double macroscopicity(const DensityOp& rho_mode, const PhaseGrid& grid) {
  return macroscopicity(wigner(rho_mode, grid));
}

double macroscopicity_exact(const DensityOp& rho_mode) {
  require_single_mode(rho_mode);
  const LinOp a = mode_operator(rho_mode.space, rho_mode.space.modes()[0], OpKind::Annihilate);
  const LinOp n = mode_operator(rho_mode.space, rho_mode.space.modes()[0], OpKind::Number);
  const CMatrix& r = rho_mode.matrix;
  const CMatrix ra = r * a.matrix();
  const CMatrix rad = r * a.adjoint().matrix();
  const cplx t1 = (r * r * n.matrix()).trace();
  const cplx t2 = (ra * rad).trace();
  return (t1 - t2).real();
}

CVector cat_amplitudes(double eta, double beta, double theta, int cutoff) {
  const cplx g = std::polar(eta, theta);
  const cplx phase = std::polar(1.0, beta);
  const double norm2 = 2.0 + 2.0 * std::cos(beta) * std::exp(-2.0 * eta * eta);
  if (norm2 <= 1e-300) throw UsageError("cat superposition vanishes (eta = 0, beta = pi)");
  return (coherent_amplitudes(-g, cutoff) + phase * coherent_amplitudes(g, cutoff)) / std::sqrt(norm2);
}

double cat_fit_objective(const DensityOp& rho_mode, double eta, double beta, double theta) {
  require_single_mode(rho_mode);
  const CVector psi = cat_amplitudes(eta, beta, theta, static_cast<int>(rho_mode.matrix.rows()));
  const double purity = rho_mode.matrix.squaredNorm();
  const double overlap = psi.dot(rho_mode.matrix * psi).real();
  return (purity - 2.0 * overlap + 1.0) / pi;
}

CatFit fit_cat(const DensityOp& rho_mode, const PhaseGrid& grid, const FitOptions& opt) {
  require_single_mode(rho_mode);
  grid.validate();
  if (opt.eta_seeds < 1 || opt.theta_seeds < 1) throw UsageError("fit needs at least one seed per axis");
  const int m = static_cast<int>(rho_mode.matrix.rows());
  const double purity = rho_mode.matrix.squaredNorm();
  const double eta_min = opt.eta_min;
  auto objective = [&](const std::array<double, 3>& v) {
    const double eta = std::max(v[0], eta_min);
    const CVector psi = cat_amplitudes(eta, v[1], v[2], m);
    double f = (purity - 2.0 * psi.dot(rho_mode.matrix * psi).real() + 1.0) / pi;
    if (v[0] < eta_min) f += 1e3 * (eta_min - v[0]) * (eta_min - v[0]);
    return f;
  };

  const std::array<double, 4> beta_seeds{pi / 2, -pi / 2, 0.0, pi};
  SimplexResult best;
  best.f = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  const double eta_hi = std::max(opt.eta_max_seed, eta_min);
  for (int ie = 0; ie < opt.eta_seeds; ++ie) {
    const double eta0 =
        opt.eta_seeds == 1 ? eta_min : eta_min + (eta_hi - eta_min) * ie / static_cast<double>(opt.eta_seeds - 1);
    for (int it = 0; it < opt.theta_seeds; ++it) {
      const double th0 = -pi + 2.0 * pi * it / opt.theta_seeds;
      for (const double b0 : beta_seeds) {
        const SimplexResult r =
            nelder_mead(objective, {eta0, b0, th0}, {0.3, 0.6, 0.3}, opt.max_evaluations, opt.tolerance);
        evaluations += r.evaluations;
        if (r.f < best.f) best = r;
      }
    }
  }

  CatFit fit;
  fit.eta = std::max(best.x[0], eta_min);
  double beta = wrap_angle(best.x[1]);
  double theta = wrap_angle(best.x[2]);
  if (theta >= pi / 2) {
    theta -= pi;
    beta = -beta;
  } else if (theta < -pi / 2) {
    theta += pi;
    beta = -beta;
  }
  fit.beta = wrap_angle(beta);
  fit.theta = theta;
  fit.converged = best.converged;
  fit.evaluations = evaluations;
  fit.objective = cat_fit_objective(rho_mode, fit.eta, fit.beta, fit.theta);

  const WignerGrid wr = wigner(rho_mode, grid);
  const int cat_cut = std::max(m, TruncationScheme::coherent_cutoff(fit.eta) + 10);
  const CVector cat = cat_amplitudes(fit.eta, fit.beta, fit.theta, cat_cut);
  const DensityOp sigma{CompositeSpace::single_mode(cat_cut), cat * cat.adjoint()};
  const WignerGrid wc = wigner(sigma, grid);
  const Eigen::MatrixXd diff = wr.values - wc.values;
  fit.residual = wr.integrate(diff.cwiseProduct(diff));
  const double scale = wr.integrate(wr.values.cwiseProduct(wr.values));
  fit.relative_residual = scale > 0 ? fit.residual / scale : std::numeric_limits<double>::infinity();
  fit.poor = fit.relative_residual > 0.05;
  if (!fit.converged) warn("cat fit did not converge in any restart; reporting the best point found");
  return fit;
}

double fidelity(const DensityOp& rho, const DensityOp& sigma) {
  if (rho.matrix.rows() != sigma.matrix.rows()) throw DimensionError("fidelity of states on different spaces");
  const CMatrix hr = 0.5 * (rho.matrix + rho.matrix.adjoint());
  const CMatrix hs = 0.5 * (sigma.matrix + sigma.matrix.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> er(hr);
  Eigen::SelfAdjointEigenSolver<CMatrix> es(hs, Eigen::EigenvaluesOnly);
  if (er.eigenvalues()(0) < -1e-6 || es.eigenvalues()(0) < -1e-6) {
    throw UsageError("fidelity needs positive semidefinite inputs");
  }
  const Eigen::VectorXd sq = er.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const CMatrix root = er.eigenvectors() * sq.asDiagonal() * er.eigenvectors().adjoint();
  CMatrix inner = root * hs * root;
  inner = 0.5 * (inner + inner.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<CMatrix> ei(inner, Eigen::EigenvaluesOnly);
  const double f = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::clamp(f, 0.0, 1.0);
}

double fidelity(const DensityOp& rho, const CVector& psi) {
  if (rho.matrix.rows() != psi.size()) throw DimensionError("fidelity of states on different spaces");
  return std::clamp(std::sqrt(std::max(0.0, psi.dot(rho.matrix * psi).real())), 0.0, 1.0);
}

double cat_fidelity(const DensityOp& rho_mode, const CatFit& fit) {
  require_single_mode(rho_mode);
  return fidelity(rho_mode, cat_amplitudes(fit.eta, fit.beta, fit.theta, static_cast<int>(rho_mode.matrix.rows())));
}

Rates nonreciprocal_rates(double n_cw, double n_ccw, double F_cw, double F_ccw) {
  if (!(n_cw + n_ccw > 0.0)) throw UsageError("R_k needs n_cw + n_ccw > 0");
  return Rates{std::abs(n_cw - n_ccw) / (n_cw + n_ccw), std::abs(F_cw - F_ccw)};
}

MetricSet compute_metrics(const DensityOp& rho_mode, const PhaseGrid& grid, const FitOptions& opt) {
  require_single_mode(rho_mode);
  MetricSet m;
  const WignerGrid w = wigner(rho_mode, grid);
  m.delta = negativity(w);
  m.I = macroscopicity(w);
  m.fit = fit_cat(rho_mode, grid, opt);
  m.F = cat_fidelity(rho_mode, m.fit);
  m.size = m.fit.size();
  const LinOp n = mode_operator(rho_mode.space, rho_mode.space.modes()[0], OpKind::Number);
  m.n = expect(n, rho_mode).real();
  return m;
}

}  // namespace topocat
