#pragma once

// Noise generation and Euler-Maruyama simulation of the controlled N-bank system
//   dX^i = a_i (mean(X) - X^i) dt + u_i theta dt + sigma_i dW^i + sigma_0 dW^0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sysrisk/errors.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/rng.hpp"

namespace sysrisk {

/// Uniform grid 0 = t_0 < ... < t_M = T.
struct TimeGrid {
  double horizon = 1.0;
  std::size_t steps = 1;

  double dt() const { return horizon / static_cast<double>(steps); }
  double knot(std::size_t k) const {
    return k == steps ? horizon : horizon * static_cast<double>(k) / static_cast<double>(steps);
  }
  std::size_t knots() const { return steps + 1; }
  /// Index of the knot closest to t (clamped to the grid).
  std::size_t nearest(double t) const {
    const double r = std::round(t / dt());
    if (r <= 0) return 0;
    return std::min(steps, static_cast<std::size_t>(r));
  }
  bool operator==(const TimeGrid&) const = default;
};

inline TimeGrid make_time_grid(double horizon, std::size_t steps) {
  if (!(horizon > 0) || !std::isfinite(horizon)) throw ConfigError("horizon T must be > 0");
  if (steps == 0) throw ConfigError("time steps must be >= 1");
  return {horizon, steps};
}

inline TimeGrid scenario_grid(const Scenario& s) { return make_time_grid(s.horizon, s.steps); }

/// Brownian increments dW^0 and dW^1..dW^N for every path and step.
struct NoiseBundle {
  TimeGrid grid;
  std::size_t n_banks = 0;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  std::vector<double> common;         // [path][step]
  std::vector<double> idiosyncratic;  // [path][step][bank]

  double dw0(std::size_t p, std::size_t k) const { return common[p * grid.steps + k]; }
  double dw(std::size_t p, std::size_t k, std::size_t i) const {
    return idiosyncratic[(p * grid.steps + k) * n_banks + i];
  }
  std::span<const double> dw_row(std::size_t p, std::size_t k) const {
    return {idiosyncratic.data() + (p * grid.steps + k) * n_banks, n_banks};
  }
};

/// Increment of Brownian motion `index` (0 = common) on (path, step); the value depends
/// only on these coordinates and the seed.
inline double brownian_increment(std::uint64_t seed, std::size_t path, std::size_t index,
                                 std::size_t step, double sqrt_dt) {
  return sqrt_dt * rng::normal({seed, rng::Stream::brownian, path, index, step});
}

inline NoiseBundle sample_noise(const TimeGrid& grid, std::size_t n_banks, std::size_t n_paths,
                                std::uint64_t seed) {
  if (n_paths == 0) throw ConfigError("noise bundle needs at least one path");
  if (n_banks == 0) throw ConfigError("noise bundle needs at least one bank");
  NoiseBundle nb{grid, n_banks, n_paths, seed, {}, {}};
  nb.common.resize(n_paths * grid.steps);
  nb.idiosyncratic.resize(n_paths * grid.steps * n_banks);
  const double sq = std::sqrt(grid.dt());
  parallel_for(n_paths, [&](std::size_t p) {
    for (std::size_t k = 0; k < grid.steps; ++k) {
      nb.common[p * grid.steps + k] = brownian_increment(seed, p, 0, k, sq);
      double* row = nb.idiosyncratic.data() + (p * grid.steps + k) * n_banks;
      for (std::size_t i = 0; i < n_banks; ++i) row[i] = brownian_increment(seed, p, i + 1, k, sq);
    }
  });
  return nb;
}

/// Feedback rule theta = f(path, step, t, x, y). The path index lets randomized policies
/// select per-path behaviour.
using FeedbackRule = std::function<double(std::size_t path, std::size_t step, double t,
                                          std::span<const double> x, std::span<const double> y)>;

/// Control values stored on the grid, theta[path][step] for steps 0..M-1 (held constant on
/// [t_k, t_{k+1})). A single row is broadcast to every path.
struct OpenLoopControl {
  std::size_t paths = 1;
  std::size_t steps = 0;
  std::vector<double> values;

  static OpenLoopControl constant(std::size_t steps, double v) {
    return {1, steps, std::vector<double>(steps, v)};
  }
  static OpenLoopControl deterministic(std::vector<double> path) {
    const std::size_t m = path.size();
    return {1, m, std::move(path)};
  }
  static OpenLoopControl zeros(std::size_t paths, std::size_t steps) {
    return {paths, steps, std::vector<double>(paths * steps, 0.0)};
  }

  double at(std::size_t p, std::size_t k) const {
    return values[(paths == 1 ? 0 : p) * steps + k];
  }
  double& at(std::size_t p, std::size_t k) { return values[(paths == 1 ? 0 : p) * steps + k]; }
  std::span<const double> row(std::size_t p) const {
    return {values.data() + (paths == 1 ? 0 : p) * steps, steps};
  }
};

using ControlSpec = std::variant<OpenLoopControl, FeedbackRule>;

/// Simulated trajectories on a shared grid.
struct PathBundle {
  TimeGrid grid;
  std::size_t n_banks = 0;
  std::size_t paths = 0;
  std::uint64_t noise_seed = 0;
  std::vector<double> x;      // [path][knot][bank], knots 0..M
  std::vector<double> y;      // [path][bank]
  std::vector<double> theta;  // [path][step], steps 0..M-1

  double state(std::size_t p, std::size_t k, std::size_t i) const {
    return x[(p * grid.knots() + k) * n_banks + i];
  }
  std::span<const double> state_row(std::size_t p, std::size_t k) const {
    return {x.data() + (p * grid.knots() + k) * n_banks, n_banks};
  }
  std::span<const double> target_row(std::size_t p) const {
    return {y.data() + p * n_banks, n_banks};
  }
  double control(std::size_t p, std::size_t k) const { return theta[p * grid.steps + k]; }

  /// The realized controls as an open-loop process (for replay on the same noise).
  OpenLoopControl realized_control() const { return {paths, grid.steps, theta}; }
};

namespace detail {

inline void check_admissible(double theta, const PolicySet& set, std::size_t p, std::size_t k) {
  if (!std::isfinite(theta) || !set.contains(theta))
    throw AdmissibilityError("control value " + std::to_string(theta) + " at path " +
                             std::to_string(p) + ", step " + std::to_string(k) +
                             " lies outside [" + std::to_string(set.lo) + ", " +
                             std::to_string(set.hi) + "]");
}

inline void check_control_shape(const ControlSpec& control, const NoiseBundle& noise) {
  if (const auto* ol = std::get_if<OpenLoopControl>(&control)) {
    if (ol->steps != noise.grid.steps)
      throw DimensionError("open-loop control has " + std::to_string(ol->steps) +
                           " steps, grid has " + std::to_string(noise.grid.steps));
    if (ol->paths != 1 && ol->paths != noise.paths)
      throw DimensionError("open-loop control path count does not match the noise bundle");
    if (ol->values.size() != ol->paths * ol->steps)
      throw DimensionError("open-loop control storage size mismatch");
  } else if (!std::get<FeedbackRule>(control)) {
    throw ConfigError("empty feedback rule");
  }
}

}  // namespace detail

/// Cross-sectional mean, shifted by the first entry so that equal entries give their common
/// value exactly (identical banks then feel no mean-reversion rounding).
inline double cross_mean(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v - x[0];
  return x[0] + acc / static_cast<double>(x.size());
}

/// Euler-Maruyama: X_{k+1} = X_k + (A X_k + theta_k u) dt + Sigma dW_k.
/// Controls outside the policy interval raise AdmissibilityError.
inline PathBundle simulate_paths(const Scenario& scenario, const ControlSpec& control,
                                 const NoiseBundle& noise) {
  const std::size_t n = scenario.n_banks();
  if (noise.n_banks != n)
    throw DimensionError("noise bundle has " + std::to_string(noise.n_banks) +
                         " idiosyncratic streams for " + std::to_string(n) + " banks");
  if (!(noise.grid == scenario_grid(scenario)))
    throw DimensionError("noise grid does not match the scenario grid");
  detail::check_control_shape(control, noise);

  const TimeGrid grid = noise.grid;
  const double dt = grid.dt();
  const PolicySet set = scenario.theta();
  PathBundle out{grid, n, noise.paths, noise.seed, {}, {}, {}};
  out.x.resize(noise.paths * grid.knots() * n);
  out.y.resize(noise.paths * n);
  out.theta.resize(noise.paths * grid.steps);

  const auto* open_loop = std::get_if<OpenLoopControl>(&control);
  const auto* feedback = std::get_if<FeedbackRule>(&control);

  parallel_for(noise.paths, [&](std::size_t p) {
    double* y = out.y.data() + p * n;
    double* x0 = out.x.data() + p * grid.knots() * n;
    for (std::size_t i = 0; i < n; ++i) {
      const InitialDatum d = scenario.initial(p, i);
      x0[i] = d.x0;
      y[i] = d.y;
    }
    for (std::size_t k = 0; k < grid.steps; ++k) {
      const double* xk = out.x.data() + (p * grid.knots() + k) * n;
      double* xn = out.x.data() + (p * grid.knots() + k + 1) * n;
      const double theta =
          open_loop ? open_loop->at(p, k)
                    : (*feedback)(p, k, grid.knot(k), std::span<const double>(xk, n),
                                  std::span<const double>(y, n));
      detail::check_admissible(theta, set, p, k);
      out.theta[p * grid.steps + k] = theta;
      const double mean = cross_mean({xk, n});
      const double common = scenario.sigma0 * noise.dw0(p, k);
      const auto dw = noise.dw_row(p, k);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& b = scenario.banks[i];
        xn[i] = xk[i] + (b.a * (mean - xk[i]) + b.u * theta) * dt + b.sigma * dw[i] + common;
      }
    }
  });
  return out;
}

/// Empirical moment and modulus-of-continuity statistics of a path bundle.
struct MomentReport {
  double exponent = 3.0;                // 2 + rho
  std::vector<double> sup_moment;       // per bank: E[sup_t |X_t|^(2+rho)]
  std::vector<double> deltas;           // ladder of window widths, decreasing
  std::vector<double> modulus;          // max over banks of E[sup_{|t-s|<=delta} |X_t-X_s|^2]
  double max_sup_moment() const {
    return sup_moment.empty() ? 0.0 : *std::max_element(sup_moment.begin(), sup_moment.end());
  }
};

/// Window ladder T/2, T/4, ... down to one grid step.
inline std::vector<double> default_delta_ladder(const TimeGrid& grid) {
  std::vector<double> out;
  for (double d = grid.horizon / 2; d >= grid.dt() * (1 - 1e-12); d /= 2) out.push_back(d);
  return out;
}

inline MomentReport moment_report(const PathBundle& paths, double rho_exp,
                                  std::vector<double> deltas = {}) {
  if (paths.paths == 0 || paths.n_banks == 0) throw ConfigError("empty path bundle");
  if (deltas.empty()) deltas = default_delta_ladder(paths.grid);
  const std::size_t n = paths.n_banks;
  const std::size_t knots = paths.grid.knots();
  const double q = 2.0 + rho_exp;

  MomentReport rep;
  rep.exponent = q;
  rep.deltas = deltas;
  rep.sup_moment.assign(n, 0.0);
  rep.modulus.assign(deltas.size(), 0.0);

  std::vector<std::size_t> lags(deltas.size());
  for (std::size_t j = 0; j < deltas.size(); ++j)
    lags[j] = static_cast<std::size_t>(std::floor(deltas[j] / paths.grid.dt() + 1e-9));

  // Per-path contributions first, then an ordered reduction.
  std::vector<double> sup_part(paths.paths * n);
  std::vector<double> mod_part(paths.paths * n * deltas.size());
  parallel_for(paths.paths, [&](std::size_t p) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < knots; ++k) s = std::max(s, std::abs(paths.state(p, k, i)));
      sup_part[p * n + i] = std::pow(s, q);
      for (std::size_t j = 0; j < lags.size(); ++j) {
        double m = 0.0;
        for (std::size_t k = 0; k < knots; ++k) {
          const double xk = paths.state(p, k, i);
          for (std::size_t l = 1; l <= lags[j] && k + l < knots; ++l) {
            const double d = paths.state(p, k + l, i) - xk;
            m = std::max(m, d * d);
          }
        }
        mod_part[(p * n + i) * deltas.size() + j] = m;
      }
    }
  });
  const double inv = 1.0 / static_cast<double>(paths.paths);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < paths.paths; ++p) acc += sup_part[p * n + i];
    rep.sup_moment[i] = acc * inv;
  }
  for (std::size_t j = 0; j < deltas.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < paths.paths; ++p) acc += mod_part[(p * n + i) * deltas.size() + j];
      rep.modulus[j] = std::max(rep.modulus[j], acc * inv);
    }
  }
  return rep;
}

}  // namespace sysrisk
