#pragma once

// Adjoint-based optimization of the central bank's money-supply rate.
//
// The backward recursion for the adjoint process is evaluated along simulated paths with
// conditional expectations replaced by cross-path least squares:
//   p_M = (2 alpha / N) (X_M - Y)
//   phat_k = E[p_{k+1} | X_k, Y]
//   p_k = phat_k + (A' phat_k + (2 beta / N)(X_k - Y)) dt
// With the running cost evaluated on the left endpoints, eta_k = 2 lambda theta_k + u' phat_k
// is the exact gradient of the discrete cost with respect to deterministic perturbations.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sysrisk/errors.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/rng.hpp"
#include "sysrisk/sde.hpp"

namespace sysrisk {

/// Monte Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
  std::size_t samples = 0;
};

inline Estimate mean_and_se(std::span<const double> xs) {
  Estimate e;
  e.samples = xs.size();
  if (xs.empty()) return e;
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double v : xs) ss += (v - mean) * (v - mean);
  e.value = mean;
  e.se = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1) /
                                   static_cast<double>(xs.size()))
                       : 0.0;
  return e;
}

/// Per-path cost L_N(X_T, Y) + sum_k R_N(X_k, Y; theta_k) dt (left-point rule; the control
/// is piecewise constant so its part is integrated exactly).
inline std::vector<double> path_costs(const PathBundle& paths, const Scenario& scenario) {
  std::vector<double> out(paths.paths);
  const double dt = paths.grid.dt();
  parallel_for(paths.paths, [&](std::size_t p) {
    const auto y = paths.target_row(p);
    double c = terminal_cost(paths.state_row(p, paths.grid.steps), y, scenario.alpha);
    double run = 0.0;
    for (std::size_t k = 0; k < paths.grid.steps; ++k)
      run += running_cost(paths.state_row(p, k), y, paths.control(p, k), scenario.beta,
                          scenario.lambda);
    out[p] = c + run * dt;
  });
  return out;
}

/// Monte Carlo J_N(theta) on the given noise.
inline Estimate evaluate_strong_cost(const ControlSpec& theta, const Scenario& scenario,
                                     const NoiseBundle& noise) {
  const auto paths = simulate_paths(scenario, theta, noise);
  const auto costs = path_costs(paths, scenario);
  return mean_and_se(costs);
}

// ---------------------------------------------------------------------------------------
// Randomized policies

/// A finite mixture of controls. Each path draws one auxiliary uniform and follows the
/// component it selects; a single component is a point mass (a strong control).
struct RandomizedPolicy {
  std::vector<ControlSpec> components;
  std::vector<double> weights;

  static RandomizedPolicy point_mass(ControlSpec c) { return {{std::move(c)}, {1.0}}; }
  static RandomizedPolicy mixture(std::vector<ControlSpec> cs, std::vector<double> ws) {
    RandomizedPolicy p{std::move(cs), std::move(ws)};
    p.validate();
    return p;
  }

  void validate() const {
    if (components.empty() || components.size() != weights.size())
      throw ConfigError("randomized policy needs one weight per component");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0)) throw ConfigError("mixture weights must be nonnegative");
      total += w;
    }
    if (!(std::abs(total - 1.0) < 1e-12)) throw ConfigError("mixture weights must sum to 1");
  }

  /// Component followed on `path`.
  std::size_t select(std::uint64_t seed, std::size_t path) const {
    if (components.size() == 1) return 0;
    const double v = rng::uniform({seed, rng::Stream::auxiliary, path, 0, 0});
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < weights.size(); ++j) {
      acc += weights[j];
      if (v < acc) return j;
    }
    return weights.size() - 1;
  }

  /// The per-path control that realizes this policy on a given noise bundle.
  ControlSpec realize(const NoiseBundle& noise) const {
    validate();
    if (components.size() == 1) return components[0];
    std::vector<std::size_t> choice(noise.paths);
    for (std::size_t p = 0; p < noise.paths; ++p) choice[p] = select(noise.seed, p);
    const bool all_open = std::all_of(components.begin(), components.end(), [](const auto& c) {
      return std::holds_alternative<OpenLoopControl>(c);
    });
    if (all_open) {
      OpenLoopControl merged = OpenLoopControl::zeros(noise.paths, noise.grid.steps);
      for (std::size_t p = 0; p < noise.paths; ++p) {
        const auto& c = std::get<OpenLoopControl>(components[choice[p]]);
        if (c.steps != noise.grid.steps) throw DimensionError("policy component grid mismatch");
        for (std::size_t k = 0; k < noise.grid.steps; ++k) merged.at(p, k) = c.at(p, k);
      }
      return merged;
    }
    return FeedbackRule([comps = components, choice](std::size_t p, std::size_t k, double t,
                                                      std::span<const double> x,
                                                      std::span<const double> y) {
      const auto& c = comps[choice[p]];
      if (const auto* ol = std::get_if<OpenLoopControl>(&c)) return ol->at(p, k);
      return std::get<FeedbackRule>(c)(p, k, t, x, y);
    });
  }
};

/// J_N^R of a randomized policy: Monte Carlo over initial data, noises and the auxiliary
/// uniforms. A point mass reproduces evaluate_strong_cost on the same noise exactly.
inline Estimate evaluate_weak_cost(const RandomizedPolicy& policy, const Scenario& scenario,
                                   const NoiseBundle& noise) {
  return evaluate_strong_cost(policy.realize(noise), scenario, noise);
}

// ---------------------------------------------------------------------------------------
// Backward adjoint

/// affine: {1, X_1..X_N, Y_1..Y_N}; quadratic adds (X_i - Y_i)^2. aggregate regresses each
/// bank separately on {1, X_i, Y_i} and cross-sectional means of X and Y (plain, and
/// u- and a-weighted when the types vary), which keeps the cost linear in N.
enum class RegressionBasis { affine, quadratic, aggregate };

inline const char* to_string(RegressionBasis b) {
  switch (b) {
    case RegressionBasis::affine: return "affine";
    case RegressionBasis::quadratic: return "quadratic";
    case RegressionBasis::aggregate: return "aggregate";
  }
  return "affine";
}

inline RegressionBasis parse_basis(const std::string& s) {
  if (s == "affine") return RegressionBasis::affine;
  if (s == "quadratic") return RegressionBasis::quadratic;
  if (s == "aggregate") return RegressionBasis::aggregate;
  throw ConfigError("unknown regression basis '" + s + "' (affine, quadratic, aggregate)");
}

struct AdjointOptions {
  RegressionBasis basis = RegressionBasis::affine;
  /// Ridge weight, relative to the mean diagonal of the Gram matrix, used when the plain
  /// normal equations are rank deficient.
  double ridge = 1e-8;
  bool estimate_q = false;
};

struct AdjointSolution {
  TimeGrid grid;
  std::size_t n_banks = 0;
  std::size_t paths = 0;
  std::vector<double> p;       // [path][knot][bank]
  std::vector<double> p_cond;  // [path][step][bank], E[p_{k+1} | X_k, Y]
  std::vector<double> q;       // [path][step][bank][brownian], only with estimate_q
  std::vector<double> residual_rms;    // per step, RMS of p_{k+1} - phat_k
  std::vector<std::size_t> basis_size; // per step, columns after dropping constants
  std::vector<std::string> warnings;
  std::size_t ridge_fallbacks = 0;
  double ridge = 0.0;

  double at(std::size_t path, std::size_t knot, std::size_t bank) const {
    return p[(path * grid.knots() + knot) * n_banks + bank];
  }
  double cond(std::size_t path, std::size_t step, std::size_t bank) const {
    return p_cond[(path * grid.steps + step) * n_banks + bank];
  }
  double q_at(std::size_t path, std::size_t step, std::size_t bank, std::size_t j) const {
    return q[((path * grid.steps + step) * n_banks + bank) * (n_banks + 1) + j];
  }

  /// Empirical E[sup_t |p_t|^2].
  double sup_second_moment() const {
    double acc = 0.0;
    for (std::size_t path = 0; path < paths; ++path) {
      double m = 0.0;
      for (std::size_t k = 0; k < grid.knots(); ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n_banks; ++i) s += at(path, k, i) * at(path, k, i);
        m = std::max(m, s);
      }
      acc += m;
    }
    return paths ? acc / static_cast<double>(paths) : 0.0;
  }
};

namespace detail {

// Least-squares fit of `target` (P x r) on the basis columns; returns fitted values.
// Constant columns are dropped, the rest are standardized, and the intercept is fitted
// separately (it is orthogonal to centred columns).
struct RegressionResult {
  Eigen::MatrixXd fitted;
  std::size_t columns = 0;
  bool ridged = false;
};

inline RegressionResult regress(const Eigen::MatrixXd& basis, const Eigen::MatrixXd& target,
                                double ridge) {
  const Eigen::Index np = basis.rows();
  const double inv_np = 1.0 / static_cast<double>(np);
  RegressionResult res;
  const Eigen::RowVectorXd target_mean = target.colwise().sum() * inv_np;

  std::vector<Eigen::Index> keep;
  Eigen::RowVectorXd mean = basis.colwise().sum() * inv_np;
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    const double first = basis(0, j);
    if (((basis.col(j).array() - first) != 0.0).any()) keep.push_back(j);
  }
  res.columns = keep.size() + 1;
  res.fitted = target_mean.replicate(np, 1);
  if (keep.empty() || np < 2) return res;

  Eigen::MatrixXd z(np, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    const Eigen::Index j = keep[c];
    z.col(static_cast<Eigen::Index>(c)) = basis.col(j).array() - mean(j);
    const double sd = std::sqrt(z.col(static_cast<Eigen::Index>(c)).squaredNorm() * inv_np);
    z.col(static_cast<Eigen::Index>(c)) /= sd;
  }
  const Eigen::MatrixXd centred_target = target.rowwise() - target_mean;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(z.cols(), z.cols());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose());
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  const Eigen::MatrixXd rhs = z.transpose() * centred_target;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const auto d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  const bool deficient = ldlt.info() != Eigen::Success || !(d.minCoeff() > 1e-10 * dmax);
  Eigen::MatrixXd coef;
  if (deficient) {
    res.ridged = true;
    const double shift = ridge * gram.trace() / static_cast<double>(gram.rows());
    gram.diagonal().array() += shift;
    coef = gram.ldlt().solve(rhs);
  } else {
    coef = ldlt.solve(rhs);
  }
  res.fitted += z * coef;
  return res;
}

}  // namespace detail

/// Regression estimate of the adjoint process along the simulated paths. `noise` is only
/// needed when q is requested.
inline AdjointSolution backward_adjoint(const PathBundle& paths, const Scenario& scenario,
                                        const AdjointOptions& opts = {},
                                        const NoiseBundle* noise = nullptr) {
  const std::size_t n = scenario.n_banks();
  if (paths.n_banks != n) throw DimensionError("path bundle does not match the scenario");
  if (opts.estimate_q && (!noise || noise->paths != paths.paths || noise->n_banks != n))
    throw DimensionError("q estimation needs the generating noise bundle");
  const TimeGrid grid = paths.grid;
  const std::size_t np = paths.paths;
  const double dt = grid.dt();
  const double nn = static_cast<double>(n);

  AdjointSolution sol;
  sol.grid = grid;
  sol.n_banks = n;
  sol.paths = np;
  sol.p.assign(np * grid.knots() * n, 0.0);
  sol.p_cond.assign(np * grid.steps * n, 0.0);
  sol.residual_rms.assign(grid.steps, 0.0);
  sol.basis_size.assign(grid.steps, 0);
  sol.ridge = opts.ridge;
  if (opts.estimate_q) sol.q.assign(np * grid.steps * n * (n + 1), 0.0);

  auto pidx = [&](std::size_t path, std::size_t k, std::size_t i) {
    return (path * grid.knots() + k) * n + i;
  };
  for (std::size_t path = 0; path < np; ++path) {
    const auto y = paths.target_row(path);
    for (std::size_t i = 0; i < n; ++i)
      sol.p[pidx(path, grid.steps, i)] =
          (2.0 * scenario.alpha / nn) * (paths.state(path, grid.steps, i) - y[i]);
  }

  const bool quad = opts.basis == RegressionBasis::quadratic;
  const bool aggregate = opts.basis == RegressionBasis::aggregate;
  // Weights of the cross-sectional means used by the aggregate basis.
  std::vector<std::vector<double>> weights{std::vector<double>(n, 1.0)};
  auto varies = [&](auto field) {
    for (const auto& b : scenario.banks)
      if (field(b) != field(scenario.banks[0])) return true;
    return false;
  };
  if (varies([](const BankType& b) { return b.u; })) {
    weights.emplace_back();
    for (const auto& b : scenario.banks) weights.back().push_back(b.u);
  }
  if (varies([](const BankType& b) { return b.a; })) {
    weights.emplace_back();
    for (const auto& b : scenario.banks) weights.back().push_back(b.a);
  }
  const std::size_t nagg = 2 * weights.size();
  const std::size_t ncols = aggregate ? nagg : 2 * n + (quad ? n : 0);
  const auto rows = static_cast<Eigen::Index>(np);
  Eigen::MatrixXd basis(rows, static_cast<Eigen::Index>(ncols));
  Eigen::MatrixXd target(rows, static_cast<Eigen::Index>(n));

  for (std::size_t k = grid.steps; k-- > 0;) {
    parallel_for(np, [&](std::size_t path) {
      const auto r = static_cast<Eigen::Index>(path);
      const auto x = paths.state_row(path, k);
      const auto y = paths.target_row(path);
      for (std::size_t i = 0; i < n; ++i) target(r, static_cast<Eigen::Index>(i)) = sol.p[pidx(path, k + 1, i)];
      if (aggregate) {
        for (std::size_t w = 0; w < weights.size(); ++w) {
          double sx = 0.0, sy = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sx += weights[w][i] * x[i];
            sy += weights[w][i] * y[i];
          }
          basis(r, static_cast<Eigen::Index>(2 * w)) = sx / nn;
          basis(r, static_cast<Eigen::Index>(2 * w + 1)) = sy / nn;
        }
        return;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        basis(r, c) = x[i];
        basis(r, c + static_cast<Eigen::Index>(n)) = y[i];
        if (quad) basis(r, c + static_cast<Eigen::Index>(2 * n)) = (x[i] - y[i]) * (x[i] - y[i]);
      }
    });
    detail::RegressionResult fit;
    if (aggregate) {
      fit.fitted.resize(rows, static_cast<Eigen::Index>(n));
      std::vector<char> ridged(n, 0);
      std::vector<std::size_t> cols(n, 0);
      parallel_for(n, [&](std::size_t i) {
        Eigen::MatrixXd own(rows, static_cast<Eigen::Index>(nagg + 2));
        own.leftCols(static_cast<Eigen::Index>(nagg)) = basis;
        for (std::size_t path = 0; path < np; ++path) {
          own(static_cast<Eigen::Index>(path), static_cast<Eigen::Index>(nagg)) = paths.state(path, k, i);
          own(static_cast<Eigen::Index>(path), static_cast<Eigen::Index>(nagg + 1)) = paths.target_row(path)[i];
        }
        const auto f = detail::regress(own, target.col(static_cast<Eigen::Index>(i)), opts.ridge);
        fit.fitted.col(static_cast<Eigen::Index>(i)) = f.fitted;
        ridged[i] = f.ridged;
        cols[i] = f.columns;
      });
      fit.columns = *std::max_element(cols.begin(), cols.end());
      fit.ridged = std::any_of(ridged.begin(), ridged.end(), [](char c) { return c != 0; });
    } else {
      fit = detail::regress(basis, target, opts.ridge);
    }
    sol.basis_size[k] = fit.columns;
    if (fit.ridged) {
      ++sol.ridge_fallbacks;
      sol.warnings.push_back("step " + std::to_string(k) +
                             ": rank-deficient regression, ridge-regularized solve used");
    }
    sol.residual_rms[k] =
        std::sqrt((target - fit.fitted).squaredNorm() / static_cast<double>(np * n));

    parallel_for(np, [&](std::size_t path) {
      const auto r = static_cast<Eigen::Index>(path);
      const auto x = paths.state_row(path, k);
      const auto y = paths.target_row(path);
      double weighted = 0.0;  // sum_i a_i phat_i
      for (std::size_t i = 0; i < n; ++i)
        weighted += scenario.banks[i].a * fit.fitted(r, static_cast<Eigen::Index>(i));
      weighted /= nn;
      for (std::size_t i = 0; i < n; ++i) {
        const double ph = fit.fitted(r, static_cast<Eigen::Index>(i));
        sol.p_cond[(path * grid.steps + k) * n + i] = ph;
        // (A' v)_j = (1/N) sum_i a_i v_i - a_j v_j
        const double at_p = weighted - scenario.banks[i].a * ph;
        sol.p[pidx(path, k, i)] = ph + (at_p + (2.0 * scenario.beta / nn) * (x[i] - y[i])) * dt;
      }
    });

    if (opts.estimate_q) {
      // q^{i,j}_k ~ E[(p^i_{k+1} - phat^i_k) dW^j_k | X_k, Y] / dt; subtracting phat leaves
      // the expectation unchanged and removes most of the variance.
      const Eigen::MatrixXd innovation = target - fit.fitted;
      for (std::size_t j = 0; j <= n; ++j) {
        Eigen::MatrixXd prod(rows, static_cast<Eigen::Index>(n));
        for (std::size_t path = 0; path < np; ++path) {
          const double dw = j == 0 ? noise->dw0(path, k) : noise->dw(path, k, j - 1);
          prod.row(static_cast<Eigen::Index>(path)) =
              innovation.row(static_cast<Eigen::Index>(path)) * (dw / dt);
        }
        const auto qfit = detail::regress(basis, prod, opts.ridge);
        for (std::size_t path = 0; path < np; ++path)
          for (std::size_t i = 0; i < n; ++i)
            sol.q[((path * grid.steps + k) * n + i) * (n + 1) + j] =
                qfit.fitted(static_cast<Eigen::Index>(path), static_cast<Eigen::Index>(i));
      }
    }
  }
  return sol;
}

/// eta_k = 2 lambda theta_k + sum_i u_i E[p^i_{k+1} | F_k] for every path and step.
inline std::vector<double> eta_process(const PathBundle& paths, const AdjointSolution& adj,
                                       const Scenario& scenario) {
  std::vector<double> eta(paths.paths * paths.grid.steps);
  for (std::size_t path = 0; path < paths.paths; ++path)
    for (std::size_t k = 0; k < paths.grid.steps; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < paths.n_banks; ++i) s += scenario.banks[i].u * adj.cond(path, k, i);
      eta[path * paths.grid.steps + k] = 2.0 * scenario.lambda * paths.control(path, k) + s;
    }
  return eta;
}

/// Monte Carlo E[sum_k eta_k h_k dt] for the perturbation theta -> theta + h. Both theta and
/// theta + h must be admissible.
inline double gateaux_derivative(const ControlSpec& theta, const OpenLoopControl& direction,
                                 const Scenario& scenario, const NoiseBundle& noise,
                                 const AdjointOptions& opts = {}) {
  const auto paths = simulate_paths(scenario, theta, noise);
  if (direction.steps != paths.grid.steps ||
      (direction.paths != 1 && direction.paths != paths.paths))
    throw DimensionError("direction does not match the simulation grid");
  const PolicySet set = scenario.theta();
  for (std::size_t path = 0; path < paths.paths; ++path)
    for (std::size_t k = 0; k < paths.grid.steps; ++k)
      if (!set.contains(paths.control(path, k) + direction.at(path, k)))
        throw AdmissibilityError("perturbed control leaves the policy interval at path " +
                                 std::to_string(path) + ", step " + std::to_string(k));
  const auto adj = backward_adjoint(paths, scenario, opts);
  const auto eta = eta_process(paths, adj, scenario);
  double acc = 0.0;
  for (std::size_t path = 0; path < paths.paths; ++path) {
    double s = 0.0;
    for (std::size_t k = 0; k < paths.grid.steps; ++k)
      s += eta[path * paths.grid.steps + k] * direction.at(path, k);
    acc += s * paths.grid.dt();
  }
  return acc / static_cast<double>(paths.paths);
}

struct GradientCheckRow {
  double epsilon = 0.0;
  double fd_derivative = 0.0;
  double gateaux = 0.0;
  double rel_err = 0.0;
};

/// Forward differences (J(theta + eps h) - J(theta)) / eps against the adjoint derivative,
/// all on the same noise. `theta` is replayed open-loop so the perturbation is well defined.
inline std::vector<GradientCheckRow> gradient_check(const ControlSpec& theta,
                                                    const OpenLoopControl& direction,
                                                    const Scenario& scenario,
                                                    const NoiseBundle& noise,
                                                    std::span<const double> epsilons,
                                                    const AdjointOptions& opts = {}) {
  const OpenLoopControl base = simulate_paths(scenario, theta, noise).realized_control();
  const double g = gateaux_derivative(base, direction, scenario, noise, opts);
  const double j0 = evaluate_strong_cost(base, scenario, noise).value;
  std::vector<GradientCheckRow> rows;
  for (double eps : epsilons) {
    OpenLoopControl moved = base;
    for (std::size_t path = 0; path < moved.paths; ++path)
      for (std::size_t k = 0; k < moved.steps; ++k) moved.at(path, k) += eps * direction.at(path, k);
    const double j1 = evaluate_strong_cost(moved, scenario, noise).value;
    const double fd = (j1 - j0) / eps;
    rows.push_back({eps, fd, g, std::abs(fd - g) / std::max(std::abs(g), 1e-300)});
  }
  return rows;
}

// ---------------------------------------------------------------------------------------
// Projected fixed-point optimizer

struct SolverOptions {
  double damping = 0.5;
  double tol = 1e-4;
  std::size_t max_iter = 50;
  RegressionBasis basis = RegressionBasis::affine;
  std::size_t min_paths = 1;
  /// Step-halvings allowed when a damped update fails to decrease the cost.
  std::size_t max_backtracks = 8;
  bool operator==(const SolverOptions&) const = default;
};

struct TraceRow {
  std::size_t iter = 0;
  double cost = 0.0;
  double se = 0.0;
  double step_norm = 0.0;
  double damping = 0.0;
};

struct OptimizerTrace {
  std::vector<TraceRow> rows;
  std::string stop_reason;
};

struct OptimizeResult {
  OpenLoopControl control;
  Estimate cost;
  OptimizerTrace trace;
  /// max over paths and steps of |theta - Pi(-(1/2 lambda) u' phat)| at the returned control
  double fixed_point_residual = 0.0;
  std::size_t ridge_fallbacks = 0;
};

namespace detail {

inline OpenLoopControl projected_target(const PathBundle& paths, const AdjointSolution& adj,
                                        const Scenario& scenario) {
  const PolicySet set = scenario.theta();
  OpenLoopControl out = OpenLoopControl::zeros(paths.paths, paths.grid.steps);
  for (std::size_t path = 0; path < paths.paths; ++path)
    for (std::size_t k = 0; k < paths.grid.steps; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < paths.n_banks; ++i) s += scenario.banks[i].u * adj.cond(path, k, i);
      out.at(path, k) = set.project(-s / (2.0 * scenario.lambda));
    }
  return out;
}

inline double h2_distance(const OpenLoopControl& a, const OpenLoopControl& b, double dt) {
  double acc = 0.0;
  const std::size_t np = std::max(a.paths, b.paths);
  for (std::size_t path = 0; path < np; ++path)
    for (std::size_t k = 0; k < a.steps; ++k) {
      const double d = a.at(path, k) - b.at(path, k);
      acc += d * d;
    }
  return std::sqrt(acc * dt / static_cast<double>(np));
}

inline double sup_distance(const OpenLoopControl& a, const OpenLoopControl& b) {
  double m = 0.0;
  const std::size_t np = std::max(a.paths, b.paths);
  for (std::size_t path = 0; path < np; ++path)
    for (std::size_t k = 0; k < a.steps; ++k) m = std::max(m, std::abs(a.at(path, k) - b.at(path, k)));
  return m;
}

}  // namespace detail

/// Damped projected fixed point
///   theta <- (1 - delta) theta + delta Pi_Theta(-(1/2 lambda) sum_j u_j phat_j),
/// with phat from the adjoint of the current iterate. The damping is halved whenever an
/// update would increase the (common-random-number) cost. Stops when both the H^2 step and
/// the sup-norm fixed-point residual are below tol, or at max_iter (best iterate returned).
inline OptimizeResult optimize_picard(const Scenario& scenario, const NoiseBundle& noise,
                                      const SolverOptions& opts = {},
                                      std::optional<OpenLoopControl> start = std::nullopt) {
  scenario.validate();
  if (!(opts.damping > 0 && opts.damping <= 1)) throw ConfigError("damping must lie in (0, 1]");
  if (!(opts.tol > 0)) throw ConfigError("solver tolerance must be positive");
  if (opts.max_iter == 0) throw ConfigError("max_iter must be >= 1");
  if (noise.paths < opts.min_paths)
    throw ConfigError("noise budget of " + std::to_string(noise.paths) +
                      " paths is below the configured minimum " + std::to_string(opts.min_paths));
  const PolicySet set = scenario.theta();
  const double dt = noise.grid.dt();
  const AdjointOptions aopts{opts.basis};

  OpenLoopControl theta = start ? *start
                                : OpenLoopControl{noise.paths, noise.grid.steps,
                                                  std::vector<double>(noise.paths * noise.grid.steps,
                                                                      set.project(0.0))};
  if (theta.paths == 1 && noise.paths > 1) {
    OpenLoopControl full = OpenLoopControl::zeros(noise.paths, noise.grid.steps);
    for (std::size_t p = 0; p < noise.paths; ++p)
      for (std::size_t k = 0; k < noise.grid.steps; ++k) full.at(p, k) = theta.at(0, k);
    theta = std::move(full);
  }

  OptimizeResult res;
  auto paths = simulate_paths(scenario, theta, noise);
  Estimate cost = mean_and_se(path_costs(paths, scenario));
  auto adj = backward_adjoint(paths, scenario, aopts);
  res.ridge_fallbacks += adj.ridge_fallbacks;
  res.trace.rows.push_back({0, cost.value, cost.se, 0.0, 0.0});

  res.trace.stop_reason = "max_iter";
  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    const OpenLoopControl target = detail::projected_target(paths, adj, scenario);
    double delta = opts.damping;
    bool accepted = false;
    OpenLoopControl candidate;
    for (std::size_t bt = 0; bt <= opts.max_backtracks; ++bt, delta *= 0.5) {
      candidate = theta;
      for (std::size_t i = 0; i < candidate.values.size(); ++i)
        candidate.values[i] =
            set.project((1.0 - delta) * theta.values[i] + delta * target.values[i]);
      auto cand_paths = simulate_paths(scenario, candidate, noise);
      const Estimate cand_cost = mean_and_se(path_costs(cand_paths, scenario));
      if (cand_cost.value <= cost.value + 1e-13 * std::abs(cost.value)) {
        const double step = detail::h2_distance(candidate, theta, dt);
        theta = std::move(candidate);
        paths = std::move(cand_paths);
        cost = cand_cost;
        adj = backward_adjoint(paths, scenario, aopts);
        res.ridge_fallbacks += adj.ridge_fallbacks;
        res.trace.rows.push_back({iter, cost.value, cost.se, step, delta});
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.trace.stop_reason = "stalled";
      break;
    }
    const double residual =
        detail::sup_distance(theta, detail::projected_target(paths, adj, scenario));
    if (res.trace.rows.back().step_norm < opts.tol && residual < opts.tol) {
      res.trace.stop_reason = "converged";
      break;
    }
  }
  res.fixed_point_residual =
      detail::sup_distance(theta, detail::projected_target(paths, adj, scenario));
  res.control = std::move(theta);
  res.cost = cost;
  return res;
}

}  // namespace sysrisk
