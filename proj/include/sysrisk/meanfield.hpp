#pragma once

// Mean-field limit: particle approximation of the conditional McKean-Vlasov system, the
// Picard map on state processes, the generator and the stochastic FPK residual.
//
// Particle i of an M-particle ensemble uses bank i's type, initial data and Brownian
// streams, so the direct-mode ensemble with M particles is the M-bank system, and the
// first N particles reuse every draw of an N-bank population.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "sysrisk/control.hpp"
#include "sysrisk/errors.hpp"
#include "sysrisk/measures.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/sde.hpp"

namespace sysrisk {

/// The i.i.d. law behind a scenario: an explicit law when configured, otherwise a
/// degenerate law if every bank (and every initial datum) is identical.
inline LimitLaw limit_law_of(const Scenario& s) {
  LimitLaw law;
  if (s.bank_law) {
    law.types = *s.bank_law;
  } else {
    if (s.banks.empty()) throw ConfigError("bank list is empty", "A_s1");
    for (const auto& b : s.banks)
      if (!(b == s.banks[0]))
        throw ConfigError("heterogeneous explicit banks do not define an i.i.d. type law");
    law.types = {Distribution::constant(s.banks[0].a), Distribution::constant(s.banks[0].u),
                 Distribution::constant(s.banks[0].sigma)};
  }
  if (s.init_law) {
    law.init = *s.init_law;
  } else {
    if (s.init.empty()) throw ConfigError("initial data are empty");
    for (const auto& d : s.init)
      if (!(d == s.init[0]))
        throw ConfigError("heterogeneous explicit initial data do not define an i.i.d. law");
    law.init = {Distribution::constant(s.init[0].x0), Distribution::constant(s.init[0].y)};
  }
  return law;
}

/// An n-bank population drawn from `law` with the weights, grid and seed of `base`.
inline Scenario population(const LimitLaw& law, std::size_t n, const Scenario& base) {
  if (n == 0) throw ConfigError("population size must be >= 1");
  Scenario s = base;
  s.banks.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.banks[i] = law.sample_type(base.seed, i);
  s.bank_law = law.types;
  s.init.clear();
  s.init_law = law.init;
  return s;
}

// ---------------------------------------------------------------------------------------
// Generator

/// A C^2 test function with analytic derivatives.
struct TestFunction {
  std::string name;
  std::function<double(double)> f, df, d2f;

  void validate() const {
    if (!f || !df || !d2f)
      throw ConfigError("test function '" + name + "' must supply f, f' and f''");
  }
};

inline TestFunction constant_function(double c) {
  return {"const", [c](double) { return c; }, [](double) { return 0.0; }, [](double) { return 0.0; }};
}

inline TestFunction identity_function() {
  return {"x", [](double x) { return x; }, [](double) { return 1.0; }, [](double) { return 0.0; }};
}

inline TestFunction square_function() {
  return {"x2", [](double x) { return x * x; }, [](double x) { return 2.0 * x; },
          [](double) { return 2.0; }};
}

/// sin(kx/s), cos(kx/s) for k = 1, 2, 3 and tanh(x/s); bounded with bounded derivatives.
inline std::vector<TestFunction> default_test_family(double scale) {
  if (!(scale > 0) || !std::isfinite(scale)) scale = 1.0;
  std::vector<TestFunction> out;
  for (int k = 1; k <= 3; ++k) {
    const double w = k / scale;
    out.push_back({"sin" + std::to_string(k), [w](double x) { return std::sin(w * x); },
                   [w](double x) { return w * std::cos(w * x); },
                   [w](double x) { return -w * w * std::sin(w * x); }});
    out.push_back({"cos" + std::to_string(k), [w](double x) { return std::cos(w * x); },
                   [w](double x) { return -w * std::sin(w * x); },
                   [w](double x) { return -w * w * std::cos(w * x); }});
  }
  const double w = 1.0 / scale;
  out.push_back({"tanh", [w](double x) { return std::tanh(w * x); },
                 [w](double x) {
                   const double c = 1.0 / std::cosh(w * x);
                   return w * c * c;
                 },
                 [w](double x) {
                   const double t = std::tanh(w * x), c = 1.0 / std::cosh(w * x);
                   return -2.0 * w * w * t * c * c;
                 }});
  return out;
}

/// [a (mean_x - x) + u theta] phi'(x) + (sigma^2 + sigma0^2)/2 phi''(x).
inline double generator_apply(const TestFunction& phi, double mean_x, double theta,
                              const BankType& bank, double sigma0, double x) {
  const double drift = bank.a * (mean_x - x) + bank.u * theta;
  return drift * phi.df(x) + 0.5 * (bank.sigma * bank.sigma + sigma0 * sigma0) * phi.d2f(x);
}

inline double generator_apply(const TestFunction& phi, const EmpiricalMeasure& m, double theta,
                              const BankType& bank, double sigma0, double x) {
  return generator_apply(phi, m.mean_x(), theta, bank, sigma0, x);
}

// ---------------------------------------------------------------------------------------
// Particle ensembles

enum class MkvMode { direct, picard };

struct MkvOptions {
  MkvMode mode = MkvMode::direct;
  std::size_t reps = 1;  // common-noise realizations
  double tol = 1e-4;     // relative to the state scale
  std::size_t max_sweeps = 200;
};

/// Particles of one or more common-noise realizations. paths.paths is the repetition count
/// and paths.n_banks the particle count.
struct ParticleEnsemble {
  Scenario scenario;  // the particle population (weights, grid, seed)
  PathBundle paths;
  NoiseBundle noise;
  std::size_t sweeps = 0;
  bool converged = true;
  double last_change = 0.0;

  std::size_t particles() const { return paths.n_banks; }
  std::size_t reps() const { return paths.paths; }
  EmpiricalMeasureFlow flow(std::size_t rep) const { return flow_from_paths(paths, scenario.banks, rep); }

  /// Empirical mean of the particles at every knot of one repetition.
  std::vector<double> mean_path(std::size_t rep) const {
    std::vector<double> m(paths.grid.knots());
    for (std::size_t k = 0; k < m.size(); ++k) {
      double acc = 0.0;
      for (double v : paths.state_row(rep, k)) acc += v;
      m[k] = acc / static_cast<double>(particles());
    }
    return m;
  }
};

namespace detail {

// One sweep of the frozen-mean map: particles evolve with the mean path of `input` and
// their own state. A fixed point is the direct Euler scheme.
inline PathBundle frozen_mean_sweep(const Scenario& s, const PathBundle& input, const NoiseBundle& noise,
                                    const OpenLoopControl& theta) {
  const std::size_t n = s.n_banks();
  const TimeGrid grid = input.grid;
  const double dt = grid.dt();
  PathBundle out = input;
  const PolicySet set = s.theta();
  parallel_for(input.paths, [&](std::size_t p) {
    for (std::size_t k = 0; k < grid.steps; ++k) {
      const double th = theta.at(p, k);
      check_admissible(th, set, p, k);
      out.theta[p * grid.steps + k] = th;
      const double mean = cross_mean(input.state_row(p, k));
      const double w0 = noise.dw0(p, k);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& b = s.banks[i];
        const double xk = out.x[(p * grid.knots() + k) * n + i];
        out.x[(p * grid.knots() + k + 1) * n + i] =
            xk + (b.a * (mean - xk) + b.u * th) * dt + b.sigma * noise.dw(p, k, i) + s.sigma0 * w0;
      }
    }
  });
  return out;
}

inline double state_scale(const PathBundle& b) {
  double m = 0.0;
  for (double v : b.x) m = std::max(m, std::abs(v));
  return std::max(1.0, m);
}

}  // namespace detail

/// Particle approximation of the conditional McKean-Vlasov system with `particles` draws
/// from `law` and opts.reps common-noise realizations. Direct mode uses the cross-particle
/// mean at every step; picard mode iterates the frozen-mean sweep until the mean path moves
/// by less than tol * scale (open-loop controls only).
inline ParticleEnsemble simulate_mkv(const LimitLaw& law, const ControlSpec& theta, std::size_t particles,
                                     const Scenario& base, const MkvOptions& opts = {}) {
  if (particles < 2) throw ConfigError("McKean-Vlasov simulation needs at least 2 particles");
  if (opts.reps == 0) throw ConfigError("McKean-Vlasov simulation needs at least one repetition");
  ParticleEnsemble e;
  e.scenario = population(law, particles, base);
  e.scenario.validate();
  e.noise = sample_noise(scenario_grid(e.scenario), particles, opts.reps, e.scenario.seed);
  if (opts.mode == MkvMode::direct) {
    e.paths = simulate_paths(e.scenario, theta, e.noise);
    return e;
  }
  const auto* ol = std::get_if<OpenLoopControl>(&theta);
  if (!ol) throw ConfigError("picard mode needs an open-loop control");
  // Start from particles frozen at their initial values.
  PathBundle cur = simulate_paths(e.scenario, *ol, e.noise);
  for (std::size_t p = 0; p < cur.paths; ++p)
    for (std::size_t k = 1; k < cur.grid.knots(); ++k)
      for (std::size_t i = 0; i < particles; ++i)
        cur.x[(p * cur.grid.knots() + k) * particles + i] = cur.x[(p * cur.grid.knots()) * particles + i];
  e.converged = false;
  e.last_change = std::numeric_limits<double>::infinity();
  for (e.sweeps = 1; e.sweeps <= opts.max_sweeps; ++e.sweeps) {
    PathBundle next = detail::frozen_mean_sweep(e.scenario, cur, e.noise, *ol);
    double change = 0.0;
    for (std::size_t p = 0; p < cur.paths; ++p)
      for (std::size_t k = 0; k < cur.grid.knots(); ++k) {
        double a = 0.0, b = 0.0;
        for (double v : cur.state_row(p, k)) a += v;
        for (double v : next.state_row(p, k)) b += v;
        change = std::max(change, std::abs(a - b) / static_cast<double>(particles));
      }
    cur = std::move(next);
    e.last_change = change;
    if (change < opts.tol * detail::state_scale(cur)) {
      e.converged = true;
      break;
    }
  }
  e.sweeps = std::min(e.sweeps, opts.max_sweeps);
  e.paths = std::move(cur);
  return e;
}

/// One application of the Picard map to an ensemble: same noise, types, initial data and
/// control, mean path taken from the input.
inline ParticleEnsemble picard_sweep(const ParticleEnsemble& input, const OpenLoopControl& theta) {
  ParticleEnsemble out = input;
  out.paths = detail::frozen_mean_sweep(input.scenario, input.paths, input.noise, theta);
  out.sweeps = input.sweeps + 1;
  return out;
}

/// E int_0^T e^{-rt} |X1_t - X2_t| dt, trapezoidal in t, averaged over particles and
/// repetitions.
inline double contraction_norm(const PathBundle& x1, const PathBundle& x2, double r) {
  if (!(r > 0)) throw ConfigError("contraction norm needs r > 0");
  if (!(x1.grid == x2.grid) || x1.paths != x2.paths || x1.n_banks != x2.n_banks)
    throw DimensionError("ensembles have different shapes");
  const TimeGrid g = x1.grid;
  const double dt = g.dt();
  double acc = 0.0;
  for (std::size_t p = 0; p < x1.paths; ++p)
    for (std::size_t k = 0; k < g.knots(); ++k) {
      const double w = (k == 0 || k == g.steps ? 0.5 : 1.0) * std::exp(-r * g.knot(k)) * dt;
      double s = 0.0;
      for (std::size_t i = 0; i < x1.n_banks; ++i) s += std::abs(x1.state(p, k, i) - x2.state(p, k, i));
      acc += w * s;
    }
  return acc / static_cast<double>(x1.paths * x1.n_banks);
}

// ---------------------------------------------------------------------------------------
// Stochastic FPK residual

struct SfpkResidual {
  std::vector<std::string> names;
  std::vector<std::vector<double>> residual;  // [phi][knot]

  /// sup over knots of the root-mean-square over test functions.
  double sup_rms() const {
    if (residual.empty()) return 0.0;
    double m = 0.0;
    for (std::size_t k = 0; k < residual[0].size(); ++k) {
      double s = 0.0;
      for (const auto& r : residual) s += r[k] * r[k];
      m = std::max(m, std::sqrt(s / static_cast<double>(residual.size())));
    }
    return m;
  }
};

/// Res(phi, t_k) = <mu_k, phi> - <mu_0, phi> - sum_{j<k} <mu_j, A phi> dt
///               - sigma0 sum_{j<k} <mu_j, phi'> dW0_j   (left-point sums).
inline SfpkResidual sfpk_residual(const EmpiricalMeasureFlow& flow, std::span<const double> theta,
                                  std::span<const double> dw0, double sigma0,
                                  const std::vector<TestFunction>& phis) {
  const TimeGrid g = flow.grid;
  if (theta.size() != g.steps || dw0.size() != g.steps)
    throw DimensionError("control and common-noise paths must match the flow grid");
  for (const auto& phi : phis) phi.validate();
  const std::size_t n = flow.size();
  const double dt = g.dt();
  SfpkResidual out;
  for (const auto& phi : phis) {
    out.names.push_back(phi.name);
    std::vector<double> res(g.knots(), 0.0);
    const double start = flow.integrate_x(0, phi.f);
    double drift_sum = 0.0, noise_sum = 0.0;
    for (std::size_t k = 0; k < g.knots(); ++k) {
      res[k] = flow.integrate_x(k, phi.f) - start - drift_sum - sigma0 * noise_sum;
      if (k == g.steps) break;
      const double mean = flow.integrate_x(k, [](double x) { return x; });
      double gen = 0.0, grad = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gen += generator_apply(phi, mean, theta[k], flow.types[i], sigma0, flow.x(k, i));
        grad += phi.df(flow.x(k, i));
      }
      drift_sum += gen / static_cast<double>(n) * dt;
      noise_sum += grad / static_cast<double>(n) * dw0[k];
    }
    out.residual.push_back(std::move(res));
  }
  return out;
}

/// Residual of repetition `rep` of an ensemble (or of an N-bank simulation wrapped as one).
inline SfpkResidual sfpk_residual(const ParticleEnsemble& e, std::size_t rep,
                                  const std::vector<TestFunction>& phis) {
  const auto flow = e.flow(rep);
  std::vector<double> th(e.paths.grid.steps), w0(e.paths.grid.steps);
  for (std::size_t k = 0; k < th.size(); ++k) {
    th[k] = e.paths.control(rep, k);
    w0[k] = e.noise.dw0(rep, k);
  }
  return sfpk_residual(flow, th, w0, e.scenario.sigma0, phis);
}

/// Pooled standard deviation of the terminal states, the default test-function scale.
inline double terminal_spread(const ParticleEnsemble& e) {
  double m = 0.0, s = 0.0;
  const std::size_t n = e.particles() * e.reps();
  for (std::size_t p = 0; p < e.reps(); ++p)
    for (double v : e.paths.state_row(p, e.paths.grid.steps)) m += v;
  m /= static_cast<double>(n);
  for (std::size_t p = 0; p < e.reps(); ++p)
    for (double v : e.paths.state_row(p, e.paths.grid.steps)) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(n));
}

// ---------------------------------------------------------------------------------------
// Mean-field cost

/// alpha <mu_T, L> + beta sum_k <mu_k, L> dt + lambda sum_k theta_k^2 dt per repetition, with
/// <mu, L> the particle average of |x - y|^2; mean and standard error over repetitions.
/// Evaluated with the same per-path routine as the N-bank cost.
inline Estimate evaluate_mf_cost(const ParticleEnsemble& e) {
  return mean_and_se(path_costs(e.paths, e.scenario));
}

/// Per-knot ensemble summaries (rep, t, mean_x, var_x, <mu, L>).
struct EnsembleSummaryRow {
  std::size_t rep = 0;
  double t = 0.0, mean_x = 0.0, var_x = 0.0, gap = 0.0;
};

inline std::vector<EnsembleSummaryRow> ensemble_summary(const ParticleEnsemble& e) {
  std::vector<EnsembleSummaryRow> rows;
  const double inv = 1.0 / static_cast<double>(e.particles());
  for (std::size_t p = 0; p < e.reps(); ++p) {
    const auto y = e.paths.target_row(p);
    for (std::size_t k = 0; k < e.paths.grid.knots(); ++k) {
      const auto x = e.paths.state_row(p, k);
      double m = 0.0, v = 0.0, gap = 0.0;
      for (double xi : x) m += xi;
      m *= inv;
      for (std::size_t i = 0; i < x.size(); ++i) {
        v += (x[i] - m) * (x[i] - m);
        gap += (x[i] - y[i]) * (x[i] - y[i]);
      }
      rows.push_back({p, e.paths.grid.knot(k), m, v * inv, gap * inv});
    }
  }
  return rows;
}

}  // namespace sysrisk
