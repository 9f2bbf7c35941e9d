#pragma once

// Ground-truth solvers for the control problem.
//
// Riccati: with the quadratic ansatz V = (x-y)'P(x-y) + 2 r'(x-y) + s, the HJB equation
// without the policy constraint reduces to the backward system
//   -P' = A'P + PA - (1/lambda) P u u' P + (beta/N) I,          P(T) = (alpha/N) I
//   -r' = (A' - (1/lambda) P u u') r + P A y,                     r(T) = 0
//   -s' = tr(Sigma Sigma' P) + 2 r' A y - (1/lambda) (u'r)^2,     s(T) = 0
// integrated with classical RK4 on the scenario grid.
//
// HJB 1-D: finite differences for the single-bank equation with the constraint active.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sysrisk/errors.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/sde.hpp"

namespace sysrisk {

struct RiccatiSolution {
  TimeGrid grid;
  std::vector<Eigen::MatrixXd> p;  // per knot
  std::vector<Eigen::VectorXd> r;
  std::vector<double> s;
  Eigen::VectorXd target;        // y the linear/constant parts were solved for
  Eigen::MatrixXd drift;         // A
  Eigen::VectorXd drift_target;  // A y
  Eigen::VectorXd supply;        // u
  double lambda = 1.0;
  double min_eigenvalue = 0.0;   // smallest eigenvalue of P seen along the sweep
};

namespace detail {

struct RiccatiState {
  Eigen::MatrixXd p;
  Eigen::VectorXd r;
  double s = 0.0;
};

struct RiccatiRhs {
  Eigen::MatrixXd a;
  Eigen::MatrixXd sigma_sigma_t;
  Eigen::VectorXd u;
  Eigen::VectorXd ay;
  double lambda;
  double beta_over_n;

  // Forward-time derivative d/dt of (P, r, s).
  RiccatiState operator()(const RiccatiState& z) const {
    const Eigen::VectorXd pu = z.p * u;
    RiccatiState d;
    d.p = -(a.transpose() * z.p + z.p * a - (pu * pu.transpose()) / lambda);
    d.p.diagonal().array() -= beta_over_n;
    const double ur = u.dot(z.r);
    d.r = -(a.transpose() * z.r - pu * (ur / lambda) + z.p * ay);
    d.s = -((sigma_sigma_t.cwiseProduct(z.p)).sum() + 2.0 * z.r.dot(ay) - ur * ur / lambda);
    return d;
  }
};

inline RiccatiState axpy(const RiccatiState& z, double h, const RiccatiState& d) {
  return {z.p + h * d.p, z.r + h * d.r, z.s + h * d.s};
}

}  // namespace detail

/// Backward RK4 solution for target vector y (defaults to the scenario's explicit targets).
inline RiccatiSolution solve_riccati(const Scenario& scenario, std::span<const double> y) {
  scenario.validate();
  const std::size_t n = scenario.n_banks();
  if (y.size() != n) throw DimensionError("target vector length does not match bank count");
  const TimeGrid grid = scenario_grid(scenario);
  const double nn = static_cast<double>(n);

  detail::RiccatiRhs rhs;
  rhs.a = build_drift_matrix(scenario.banks);
  const Eigen::MatrixXd sig = build_vol_matrix(scenario.banks, scenario.sigma0);
  rhs.sigma_sigma_t = sig * sig.transpose();
  rhs.u = supply_vector(scenario.banks);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n));
  rhs.ay = rhs.a * yv;
  rhs.lambda = scenario.lambda;
  rhs.beta_over_n = scenario.beta / nn;

  RiccatiSolution sol;
  sol.grid = grid;
  sol.target = yv;
  sol.drift = rhs.a;
  sol.drift_target = rhs.ay;
  sol.supply = rhs.u;
  sol.lambda = scenario.lambda;
  sol.p.resize(grid.knots());
  sol.r.resize(grid.knots());
  sol.s.resize(grid.knots());

  const auto ni = static_cast<Eigen::Index>(n);
  detail::RiccatiState z{Eigen::MatrixXd::Identity(ni, ni) * (scenario.alpha / nn),
                         Eigen::VectorXd::Zero(ni), 0.0};
  const double h = grid.dt();
  double min_eig = z.p.diagonal().minCoeff();
  for (std::size_t k = grid.steps + 1; k-- > 0;) {
    if (k < grid.steps) {
      const auto k1 = rhs(z);
      const auto k2 = rhs(detail::axpy(z, -0.5 * h, k1));
      const auto k3 = rhs(detail::axpy(z, -0.5 * h, k2));
      const auto k4 = rhs(detail::axpy(z, -h, k3));
      z.p -= (h / 6.0) * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
      z.r -= (h / 6.0) * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r);
      z.s -= (h / 6.0) * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s);
      z.p = 0.5 * (z.p + z.p.transpose()).eval();
      if (!z.p.allFinite() || !z.r.allFinite() || !std::isfinite(z.s) ||
          z.p.cwiseAbs().maxCoeff() > 1e12)
        throw NumericalError("Riccati integration blew up at t = " + std::to_string(grid.knot(k)));
      const double e = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(z.p, Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .minCoeff();
      min_eig = std::min(min_eig, e);
      if (e < -1e-10)
        throw NumericalError("Riccati matrix lost positive semidefiniteness (min eigenvalue " +
                             std::to_string(e) + ")");
    }
    sol.p[k] = z.p;
    sol.r[k] = z.r;
    sol.s[k] = z.s;
  }
  sol.min_eigenvalue = min_eig;
  return sol;
}

/// Targets taken from the scenario's explicit initial data.
inline RiccatiSolution solve_riccati(const Scenario& scenario) {
  if (scenario.random_initial())
    throw ConfigError("scenario samples targets from a law; pass the target vector explicitly");
  std::vector<double> y;
  for (const auto& d : scenario.init) y.push_back(d.y);
  return solve_riccati(scenario, y);
}

namespace detail {
// r and s depend on the target only through A y.
inline bool same_drift_target(const RiccatiSolution& sol, std::span<const double> y) {
  const auto n = sol.target.size();
  if (static_cast<Eigen::Index>(y.size()) != n) throw DimensionError("target length mismatch");
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::VectorXd ay = sol.drift * yv;
  const double scale = 1.0 + sol.drift_target.cwiseAbs().maxCoeff();
  return (ay - sol.drift_target).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}
}  // namespace detail

/// (x0-y)' P(0) (x0-y) + 2 r(0)'(x0-y) + s(0)
inline double riccati_value(const RiccatiSolution& sol, std::span<const double> x0,
                            std::span<const double> y) {
  const auto n = sol.target.size();
  if (static_cast<Eigen::Index>(x0.size()) != n) throw DimensionError("state length mismatch");
  if (!detail::same_drift_target(sol, y))
    throw ConfigError("Riccati solution was computed for a different target vector");
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = x0[i] - y[i];
  return z.dot(sol.p[0] * z) + 2.0 * sol.r[0].dot(z) + sol.s[0];
}

/// Projected feedback Pi_Theta(-(1/lambda) u'(P(t)(x-y) + r(t))) at the nearest knot.
inline double riccati_feedback(const RiccatiSolution& sol, double t, std::span<const double> x,
                               std::span<const double> y, const PolicySet& theta) {
  const std::size_t k = sol.grid.nearest(t);
  const auto n = sol.target.size();
  double pz_u = 0.0;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = x[i] - y[i];
  pz_u = sol.supply.dot(sol.p[k] * z + sol.r[k]);
  return theta.project(-pz_u / sol.lambda);
}

/// The Riccati feedback as a simulation control.
inline FeedbackRule riccati_feedback_rule(const RiccatiSolution& sol, const PolicySet& theta) {
  return [&sol, theta](std::size_t, std::size_t, double t, std::span<const double> x,
                       std::span<const double> y) {
    return riccati_feedback(sol, t, x, y, theta);
  };
}

/// E[V(0, X0; Y)] over the scenario's initial law (one Riccati solve per distinct A y),
/// averaged over `samples` draws using the same initial-data streams as the simulator.
inline double riccati_expected_value(const Scenario& scenario, std::size_t samples) {
  if (!scenario.random_initial()) {
    const auto sol = solve_riccati(scenario);
    std::vector<double> x0, y;
    for (const auto& d : scenario.init) {
      x0.push_back(d.x0);
      y.push_back(d.y);
    }
    return riccati_value(sol, x0, y);
  }
  const std::size_t n = scenario.n_banks();
  std::vector<double> x0(n), y(n);
  std::optional<RiccatiSolution> cached;
  double acc = 0.0;
  for (std::size_t p = 0; p < samples; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto d = scenario.initial(p, i);
      x0[i] = d.x0;
      y[i] = d.y;
    }
    if (!cached || !detail::same_drift_target(*cached, y)) cached = solve_riccati(scenario, y);
    acc += riccati_value(*cached, x0, y);
  }
  return acc / static_cast<double>(samples);
}

// ---------------------------------------------------------------------------------------
// One-dimensional HJB

enum class HjbScheme { explicit_euler, implicit_euler, crank_nicolson };

struct HjbOptions {
  std::size_t space_nodes = 401;
  std::size_t time_steps = 0;  // 0: use the scenario grid
  double radius = 0.0;         // 0: default truncation radius
  HjbScheme scheme = HjbScheme::crank_nicolson;
};

/// Value and feedback on a space-time grid for a single bank with target y.
struct HjbSurface1D {
  TimeGrid grid;
  double x_min = 0.0;
  double dx = 0.0;
  std::size_t nodes = 0;
  double target = 0.0;
  std::vector<double> value;     // [knot][node]
  std::vector<double> feedback;  // [knot][node]

  double x(std::size_t m) const { return x_min + dx * static_cast<double>(m); }
  double v(std::size_t k, std::size_t m) const { return value[k * nodes + m]; }
  double theta_star(std::size_t k, std::size_t m) const { return feedback[k * nodes + m]; }

  /// Cubic Lagrange interpolation in x at knot k (exact on quadratics).
  double value_at(std::size_t k, double xq) const { return interp(value, k, xq); }
  double feedback_at(std::size_t k, double xq) const { return interp(feedback, k, xq); }

 private:
  double interp(const std::vector<double>& f, std::size_t k, double xq) const {
    const double s = (xq - x_min) / dx;
    auto base = static_cast<long>(std::floor(s)) - 1;
    base = std::clamp<long>(base, 0, static_cast<long>(nodes) - 4);
    double out = 0.0;
    for (int a = 0; a < 4; ++a) {
      double w = 1.0;
      for (int b = 0; b < 4; ++b)
        if (a != b) w *= (s - static_cast<double>(base + b)) / static_cast<double>(a - b);
      out += w * f[k * nodes + static_cast<std::size_t>(base + a)];
    }
    return out;
  }
};

/// Default truncation radius |x0-y| + 6 sqrt((sigma^2+sigma0^2) T) + |u| max|theta| T.
inline double default_hjb_radius(const Scenario& s) {
  const auto& b = s.banks.at(0);
  const double r = std::abs(s.init.at(0).x0 - s.init.at(0).y) +
                   6.0 * std::sqrt((b.sigma * b.sigma + s.sigma0 * s.sigma0) * s.horizon) +
                   std::abs(b.u) * std::max(std::abs(s.theta_lo), std::abs(s.theta_hi)) * s.horizon;
  return r > 0 ? r : 1.0;
}

/// Solves -V_t - min_theta { u theta V_x + D V_xx + beta |x-y|^2 + lambda theta^2 } = 0 with
/// D = (sigma^2 + sigma0^2)/2 and V(T, x) = alpha |x-y|^2, backward in time. The minimizer is
/// clamp(-u V_x / (2 lambda)) with V_x from central differences, lagged one time level.
/// Boundaries use quadratic extrapolation.
///
/// Crank-Nicolson (the default) uses central advection, which is exact on the quadratic
/// value functions of this problem. The explicit scheme switches to first-order upwinding
/// where the cell Peclet number exceeds 2, so it is monotone but only O(h) accurate.
inline HjbSurface1D solve_hjb_1d(const Scenario& scenario, const HjbOptions& opts = {}) {
  scenario.validate();
  if (scenario.n_banks() != 1) throw ConfigError("the 1-D HJB solver needs exactly one bank");
  if (scenario.random_initial())
    throw ConfigError("the 1-D HJB solver needs explicit initial data (x0, y)");
  if (opts.space_nodes < 5) throw ConfigError("the 1-D HJB grid needs at least 5 nodes");

  const BankType bank = scenario.banks[0];
  const double y = scenario.init[0].y;
  const double radius = opts.radius > 0 ? opts.radius : default_hjb_radius(scenario);
  const std::size_t nx = opts.space_nodes;
  const TimeGrid grid = make_time_grid(scenario.horizon, opts.time_steps ? opts.time_steps
                                                                         : scenario.steps);
  const double h = 2.0 * radius / static_cast<double>(nx - 1);
  const double dt = grid.dt();
  const double diff = 0.5 * (bank.sigma * bank.sigma + scenario.sigma0 * scenario.sigma0);
  const double lam = scenario.lambda;
  const double u = bank.u;
  const PolicySet set = scenario.theta();
  const double b_max = std::abs(u) * std::max(std::abs(set.lo), std::abs(set.hi));

  if (opts.scheme == HjbScheme::explicit_euler) {
    const double cfl = dt * (2.0 * diff / (h * h) + b_max / h);
    if (cfl > 1.0)
      throw ConfigError("explicit HJB scheme violates the CFL bound (dt * (2D/h^2 + |b|/h) = " +
                        std::to_string(cfl) +
                        " > 1); use more time steps or an implicit scheme");
  }

  HjbSurface1D out;
  out.grid = grid;
  out.x_min = y - radius;
  out.dx = h;
  out.nodes = nx;
  out.target = y;
  out.value.assign(grid.knots() * nx, 0.0);
  out.feedback.assign(grid.knots() * nx, 0.0);

  std::vector<double> run(nx);
  for (std::size_t m = 0; m < nx; ++m) {
    const double g = out.x(m) - y;
    run[m] = scenario.beta * g * g;
    out.value[grid.steps * nx + m] = scenario.alpha * g * g;
  }

  auto slope = [&](const double* v, std::size_t m) {
    if (m == 0) return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    if (m == nx - 1) return (3.0 * v[nx - 1] - 4.0 * v[nx - 2] + v[nx - 3]) / (2.0 * h);
    return (v[m + 1] - v[m - 1]) / (2.0 * h);
  };
  auto fill_feedback = [&](std::size_t k) {
    const double* v = out.value.data() + k * nx;
    for (std::size_t m = 0; m < nx; ++m)
      out.feedback[k * nx + m] = set.project(-u * slope(v, m) / (2.0 * lam));
  };
  fill_feedback(grid.steps);

  // Stencil weights (lower, centre, upper) of b V_x + D V_xx at node m.
  auto stencil = [&](double b, bool central) {
    std::array<double, 3> w{diff / (h * h), -2.0 * diff / (h * h), diff / (h * h)};
    if (central || std::abs(b) * h <= 2.0 * diff) {
      w[0] -= b / (2.0 * h);
      w[2] += b / (2.0 * h);
    } else if (b > 0) {
      w[1] -= b / h;
      w[2] += b / h;
    } else {
      w[0] -= b / h;
      w[1] += b / h;
    }
    return w;
  };

  std::vector<double> theta(nx), src(nx);
  Eigen::SparseMatrix<double> sys(static_cast<Eigen::Index>(nx), static_cast<Eigen::Index>(nx));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(nx));
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  std::vector<Eigen::Triplet<double>> trip;

  for (std::size_t k = grid.steps; k-- > 0;) {
    const double* next = out.value.data() + (k + 1) * nx;
    double* cur = out.value.data() + k * nx;
    for (std::size_t m = 0; m < nx; ++m) {
      theta[m] = out.feedback[(k + 1) * nx + m];
      src[m] = run[m] + lam * theta[m] * theta[m];
    }
    if (opts.scheme == HjbScheme::explicit_euler) {
      for (std::size_t m = 1; m + 1 < nx; ++m) {
        const auto w = stencil(u * theta[m], false);
        cur[m] = next[m] + dt * (w[0] * next[m - 1] + w[1] * next[m] + w[2] * next[m + 1] + src[m]);
      }
    } else {
      const bool cn = opts.scheme == HjbScheme::crank_nicolson;
      const double wi = cn ? 0.5 : 1.0;
      trip.clear();
      for (std::size_t m = 1; m + 1 < nx; ++m) {
        const auto w = stencil(u * theta[m], cn);
        const auto row = static_cast<Eigen::Index>(m);
        trip.emplace_back(row, row - 1, -wi * dt * w[0]);
        trip.emplace_back(row, row, 1.0 - wi * dt * w[1]);
        trip.emplace_back(row, row + 1, -wi * dt * w[2]);
        const double explicit_part =
            (1.0 - wi) * (w[0] * next[m - 1] + w[1] * next[m] + w[2] * next[m + 1]);
        rhs(row) = next[m] + dt * (explicit_part + src[m]);
      }
      const auto last = static_cast<Eigen::Index>(nx - 1);
      trip.emplace_back(0, 0, 1.0);
      trip.emplace_back(0, 1, -3.0);
      trip.emplace_back(0, 2, 3.0);
      trip.emplace_back(0, 3, -1.0);
      trip.emplace_back(last, last, 1.0);
      trip.emplace_back(last, last - 1, -3.0);
      trip.emplace_back(last, last - 2, 3.0);
      trip.emplace_back(last, last - 3, -1.0);
      rhs(0) = 0.0;
      rhs(last) = 0.0;
      sys.setFromTriplets(trip.begin(), trip.end());
      lu.compute(sys);
      if (lu.info() != Eigen::Success) throw NumericalError("HJB linear system is singular");
      const Eigen::VectorXd sol = lu.solve(rhs);
      for (std::size_t m = 1; m + 1 < nx; ++m) cur[m] = sol(static_cast<Eigen::Index>(m));
    }
    cur[0] = 3.0 * cur[1] - 3.0 * cur[2] + cur[3];
    cur[nx - 1] = 3.0 * cur[nx - 2] - 3.0 * cur[nx - 3] + cur[nx - 4];
    for (std::size_t m = 0; m < nx; ++m)
      if (!std::isfinite(cur[m]))
        throw NumericalError("HJB solution became non-finite at t = " + std::to_string(grid.knot(k)));
    fill_feedback(k);
  }
  return out;
}

}  // namespace sysrisk
