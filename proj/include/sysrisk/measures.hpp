#pragma once

// Empirical measures on E = (a, u, sigma, y, x) and the metrics built on them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "sysrisk/errors.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/rng.hpp"
#include "sysrisk/sde.hpp"

namespace sysrisk {

using Point5 = std::array<double, 5>;

inline double squared_distance(const Point5& p, const Point5& q) {
  double s = 0.0;
  for (std::size_t c = 0; c < 5; ++c) s += (p[c] - q[c]) * (p[c] - q[c]);
  return s;
}

/// Uniformly weighted atoms (a, u, sigma, y, x).
struct EmpiricalMeasure {
  std::vector<Point5> atoms;

  std::size_t size() const { return atoms.size(); }
  double weight() const { return atoms.empty() ? 0.0 : 1.0 / static_cast<double>(atoms.size()); }
  double total_mass() const { return weight() * static_cast<double>(atoms.size()); }

  /// <mu, f> for f(atom).
  template <typename F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (const auto& a : atoms) acc += f(a);
    return acc * weight();
  }
  double mean_x() const {
    return integrate([](const Point5& a) { return a[4]; });
  }
};

inline EmpiricalMeasure empirical_from_state(std::span<const BankType> types,
                                             std::span<const double> targets,
                                             std::span<const double> states) {
  if (types.size() != targets.size() || types.size() != states.size())
    throw DimensionError("types, targets and states must have equal length");
  if (types.empty()) throw DimensionError("empirical measure needs at least one atom");
  EmpiricalMeasure m;
  m.atoms.reserve(types.size());
  for (std::size_t i = 0; i < types.size(); ++i)
    m.atoms.push_back({types[i].a, types[i].u, types[i].sigma, targets[i], states[i]});
  return m;
}

/// One empirical measure per knot; atom i keeps its type and target, only x moves.
struct EmpiricalMeasureFlow {
  TimeGrid grid;
  std::vector<BankType> types;
  std::vector<double> targets;
  std::vector<double> states;  // [knot][atom]

  std::size_t size() const { return types.size(); }
  double x(std::size_t k, std::size_t i) const { return states[k * types.size() + i]; }
  std::span<const double> row(std::size_t k) const {
    return {states.data() + k * types.size(), types.size()};
  }
  EmpiricalMeasure at(std::size_t k) const { return empirical_from_state(types, targets, row(k)); }

  /// <mu_k, f(x)> for a function of the state only.
  template <typename F>
  double integrate_x(std::size_t k, F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < types.size(); ++i) acc += f(x(k, i));
    return acc / static_cast<double>(types.size());
  }
};

/// The empirical flow of one simulated path of an N-bank system.
inline EmpiricalMeasureFlow flow_from_paths(const PathBundle& paths, std::span<const BankType> types,
                                            std::size_t path) {
  if (types.size() != paths.n_banks) throw DimensionError("type list does not match path bundle");
  if (path >= paths.paths) throw DimensionError("path index out of range");
  EmpiricalMeasureFlow f;
  f.grid = paths.grid;
  f.types.assign(types.begin(), types.end());
  const auto y = paths.target_row(path);
  f.targets.assign(y.begin(), y.end());
  f.states.resize(paths.grid.knots() * paths.n_banks);
  for (std::size_t k = 0; k < paths.grid.knots(); ++k) {
    const auto r = paths.state_row(path, k);
    std::copy(r.begin(), r.end(), f.states.begin() + static_cast<std::ptrdiff_t>(k * paths.n_banks));
  }
  return f;
}

// ---------------------------------------------------------------------------------------
// Quadratic Wasserstein distance

struct W2Options {
  std::size_t exact_threshold = 256;
  std::size_t directions = 64;
  std::uint64_t seed = 0x5eed;
};

struct W2Result {
  double value = 0.0;
  bool exact = true;
};

/// Optimal assignment for a square cost matrix (row-major). Returns col[row].
inline std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  // Shortest augmenting paths with potentials; 1-based bookkeeping, index 0 is a sentinel.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n);
  for (std::size_t j = 1; j <= n; ++j) col[p[j] - 1] = j - 1;
  return col;
}

namespace detail {

// Squared W2 between two sorted samples with uniform weights (quantile coupling).
inline double w2_squared_1d(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size(), m = b.size();
  if (n == m) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(n);
  }
  // Walk the merged breakpoints of the two quantile functions.
  double s = 0.0, t = 0.0;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    const double ta = static_cast<double>(i + 1) / static_cast<double>(n);
    const double tb = static_cast<double>(j + 1) / static_cast<double>(m);
    const double next = std::min(ta, tb);
    s += (next - t) * (a[i] - b[j]) * (a[i] - b[j]);
    t = next;
    if (ta <= next) ++i;
    if (tb <= next) ++j;
  }
  return s;
}

inline std::vector<Point5> sliced_directions(std::size_t count, std::uint64_t seed) {
  std::vector<Point5> dirs(count);
  for (std::size_t d = 0; d < count; ++d) {
    double norm = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      dirs[d][c] = rng::normal({seed, rng::Stream::direction, d, c, 0});
      norm += dirs[d][c] * dirs[d][c];
    }
    norm = std::sqrt(norm);
    for (auto& c : dirs[d]) c /= norm;
  }
  return dirs;
}

}  // namespace detail

/// Exact W2 by optimal assignment (sum accumulated in index order).
inline double wasserstein2_exact(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const std::size_t n = mu.size();
  if (n == 0 || nu.size() == 0) throw DimensionError("Wasserstein distance of an empty measure");
  if (nu.size() != n) throw DimensionError("exact assignment needs equal atom counts");
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = squared_distance(mu.atoms[i], nu.atoms[j]);
  const auto col = hungarian(cost, n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cost[i * n + col[i]];
  return std::sqrt(s / static_cast<double>(n));
}

/// Sliced W2: root-mean-square over fixed random directions of the 1-D distances between
/// projections. Projections are 1-Lipschitz, so this never exceeds the exact value.
inline double wasserstein2_sliced(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                  const W2Options& opts = {}) {
  if (mu.size() == 0 || nu.size() == 0) throw DimensionError("Wasserstein distance of an empty measure");
  const auto dirs = detail::sliced_directions(opts.directions, opts.seed);
  double acc = 0.0;
  std::vector<double> a(mu.size()), b(nu.size());
  for (const auto& d : dirs) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = 0.0;
      for (std::size_t c = 0; c < 5; ++c) a[i] += d[c] * mu.atoms[i][c];
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      b[i] = 0.0;
      for (std::size_t c = 0; c < 5; ++c) b[i] += d[c] * nu.atoms[i][c];
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    acc += detail::w2_squared_1d(a, b);
  }
  return std::sqrt(acc / static_cast<double>(dirs.size()));
}

/// Exact for equal atom counts up to the threshold, sliced (flagged) otherwise.
inline W2Result wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                             const W2Options& opts = {}) {
  if (mu.size() == 0 || nu.size() == 0) throw DimensionError("Wasserstein distance of an empty measure");
  if (mu.size() == nu.size() && mu.size() <= opts.exact_threshold)
    return {wasserstein2_exact(mu, nu), true};
  return {wasserstein2_sliced(mu, nu, opts), false};
}

/// d_S = max over knots of W2 at each knot.
inline W2Result flow_distance(const EmpiricalMeasureFlow& rho, const EmpiricalMeasureFlow& rho_hat,
                              const W2Options& opts = {}) {
  if (!(rho.grid == rho_hat.grid)) throw DimensionError("flows live on different time grids");
  const std::size_t knots = rho.grid.knots();
  std::vector<W2Result> per(knots);
  parallel_for(knots, [&](std::size_t k) { per[k] = wasserstein2(rho.at(k), rho_hat.at(k), opts); });
  W2Result out;
  for (const auto& r : per) {
    out.value = std::max(out.value, r.value);
    out.exact = out.exact && r.exact;
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Product metrics

/// A point of the product space carrying the initial measure, the control path and the
/// flow of empirical measures.
struct FlowPoint {
  EmpiricalMeasure initial;
  std::vector<double> control;  // piecewise constant on the flow's grid steps
  EmpiricalMeasureFlow flow;
};

/// A point of the canonical space: per-bank (a, u, sigma, y, x0), the common Brownian path,
/// the idiosyncratic Brownian paths (all on grid knots) and the control.
struct CanonicalPoint {
  TimeGrid grid;
  std::vector<Point5> data;
  std::vector<double> common;             // [knot]
  std::vector<std::vector<double>> idio;  // [bank][knot]
  std::vector<double> control;            // [step]
};

struct CompositeMetrics {
  double d_hat_s = 0.0;
  double d_omega = 0.0;
  double d1 = 0.0, d2 = 0.0, d3 = 0.0, d4 = 0.0;
  double tail_bound = 0.0;
  bool exact = true;
};

namespace detail {

inline double control_l2(std::span<const double> a, std::span<const double> b, double dt) {
  if (a.size() != b.size()) throw DimensionError("control paths have different lengths");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s * dt);
}

inline double sup_gap(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("paths have different lengths");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace detail

/// d_hatS = W2(initial) + L2 distance of controls + d_S.
inline W2Result flow_point_distance(const FlowPoint& p, const FlowPoint& q, const W2Options& opts = {}) {
  if (!(p.flow.grid == q.flow.grid)) throw DimensionError("flows live on different time grids");
  if (p.control.size() != p.flow.grid.steps) throw DimensionError("control length does not match the grid");
  const auto w0 = wasserstein2(p.initial, q.initial, opts);
  const auto ds = flow_distance(p.flow, q.flow, opts);
  return {w0.value + detail::control_l2(p.control, q.control, p.flow.grid.dt()) + ds.value,
          w0.exact && ds.exact};
}

/// The canonical-space metric d1 + d2 + d3 + d4 with the bounded sums truncated after
/// `truncation` terms (1-based weights 2^-i); the omitted tail is at most 2^-truncation.
inline CompositeMetrics canonical_distance(const CanonicalPoint& p, const CanonicalPoint& q,
                                           std::size_t truncation) {
  if (!(p.grid == q.grid)) throw DimensionError("canonical points live on different time grids");
  if (p.data.size() != q.data.size() || p.idio.size() != q.idio.size())
    throw DimensionError("canonical points have different bank counts");
  CompositeMetrics m;
  const std::size_t n1 = std::min(truncation, p.data.size());
  for (std::size_t i = 0; i < n1; ++i) {
    const double d = std::sqrt(squared_distance(p.data[i], q.data[i]));
    m.d1 += std::ldexp(1.0, -static_cast<int>(i + 1)) * d / (1.0 + d);
  }
  m.d2 = detail::sup_gap(p.common, q.common);
  const std::size_t n3 = std::min(truncation, p.idio.size());
  for (std::size_t i = 0; i < n3; ++i) {
    const double d = detail::sup_gap(p.idio[i], q.idio[i]);
    m.d3 += std::ldexp(1.0, -static_cast<int>(i + 1)) * d / (1.0 + d);
  }
  m.d4 = detail::control_l2(p.control, q.control, p.grid.dt());
  m.d_omega = m.d1 + m.d2 + m.d3 + m.d4;
  m.tail_bound = std::ldexp(1.0, -static_cast<int>(std::min<std::size_t>(truncation, 1000)));
  return m;
}

/// Both product metrics for a pair of points.
inline CompositeMetrics composite_metrics(const FlowPoint& p1, const CanonicalPoint& c1,
                                          const FlowPoint& p2, const CanonicalPoint& c2,
                                          std::size_t truncation, const W2Options& opts = {}) {
  auto m = canonical_distance(c1, c2, truncation);
  const auto d = flow_point_distance(p1, p2, opts);
  m.d_hat_s = d.value;
  m.exact = d.exact;
  return m;
}

/// Canonical point of one simulated path: Brownian paths are cumulative sums of the
/// increments in the noise bundle.
inline CanonicalPoint canonical_from_simulation(const Scenario& scenario, const PathBundle& paths,
                                                const NoiseBundle& noise, std::size_t path) {
  const std::size_t n = scenario.n_banks();
  if (paths.n_banks != n || noise.n_banks != n) throw DimensionError("bank count mismatch");
  CanonicalPoint c;
  c.grid = paths.grid;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = scenario.banks[i];
    c.data.push_back({b.a, b.u, b.sigma, paths.target_row(path)[i], paths.state(path, 0, i)});
  }
  c.common.assign(paths.grid.knots(), 0.0);
  c.idio.assign(n, std::vector<double>(paths.grid.knots(), 0.0));
  for (std::size_t k = 0; k < paths.grid.steps; ++k) {
    c.common[k + 1] = c.common[k] + noise.dw0(path, k);
    for (std::size_t i = 0; i < n; ++i) c.idio[i][k + 1] = c.idio[i][k] + noise.dw(path, k, i);
  }
  for (std::size_t k = 0; k < paths.grid.steps; ++k) c.control.push_back(paths.control(path, k));
  return c;
}

/// Flow point of one simulated path.
inline FlowPoint flow_point_from_simulation(const Scenario& scenario, const PathBundle& paths,
                                            std::size_t path) {
  FlowPoint f;
  f.flow = flow_from_paths(paths, scenario.banks, path);
  f.initial = f.flow.at(0);
  for (std::size_t k = 0; k < paths.grid.steps; ++k) f.control.push_back(paths.control(path, k));
  return f;
}

}  // namespace sysrisk
