#pragma once

// Convergence studies: optimal values across N, objective convergence for a fixed policy,
// strong/weak/oracle agreement, propagation-of-chaos distances and the replay of a large-M
// optimal control at smaller N.
//
// All N-bank systems of a study are drawn from one law with one seed, so the first N banks
// of any larger system share their types, initial data and Brownian paths (nested coupling).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sysrisk/control.hpp"
#include "sysrisk/errors.hpp"
#include "sysrisk/lq_oracle.hpp"
#include "sysrisk/meanfield.hpp"
#include "sysrisk/measures.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/sde.hpp"

namespace sysrisk {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

struct StudyRow {
  std::size_t n = 0;
  double value = 0.0;
  double se = 0.0;
  double aux = 0.0;     // study-specific: a gap, a distance, ...
  double aux_se = 0.0;  // standard error of aux where it is a Monte Carlo quantity
  std::string status = "ok";
};

struct StudyReport {
  std::string study;
  std::vector<StudyRow> rows;  // sorted by N
  std::uint64_t seed = 0;
  std::string fingerprint;
  double wall_seconds = 0.0;
  std::vector<std::string> notes;

  const StudyRow& row_for(std::size_t n) const {
    for (const auto& r : rows)
      if (r.n == n) return r;
    throw ConfigError("no study row for N = " + std::to_string(n));
  }
};

struct StudyOptions {
  std::vector<std::size_t> ns{8, 16, 32, 64};
  std::size_t m_ref = 256;
  std::size_t reps = 30;
  std::string config_text;  // hashed into the report fingerprint
};

namespace detail {

class StudyClock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void check_ns(const std::vector<std::size_t>& ns) {
  if (ns.empty()) throw ConfigError("study needs at least one N");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] == 0) throw ConfigError("study sizes must be >= 1");
    if (i > 0 && ns[i] <= ns[i - 1]) throw ConfigError("study sizes must be strictly increasing");
  }
}

inline Estimate paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return mean_and_se(d);
}

inline StudyReport new_report(std::string name, const Scenario& base, const StudyOptions& opts) {
  StudyReport r;
  r.study = std::move(name);
  r.seed = base.seed;
  r.fingerprint = hex64(fnv1a(opts.config_text));
  return r;
}

// Optimal control and per-path costs of an n-bank population.
struct SolvedPopulation {
  Scenario scenario;
  NoiseBundle noise;
  OptimizeResult result;
  std::vector<double> costs;
};

inline SolvedPopulation solve_population(const LimitLaw& law, std::size_t n, const Scenario& base,
                                         const SolverOptions& solver) {
  SolvedPopulation s;
  s.scenario = population(law, n, base);
  s.noise = sample_noise(scenario_grid(s.scenario), n, base.mc_paths, base.seed);
  s.result = optimize_picard(s.scenario, s.noise, solver);
  s.costs = path_costs(simulate_paths(s.scenario, s.result.control, s.noise), s.scenario);
  return s;
}

}  // namespace detail

/// Optimal values V_N for each N plus the mean-field proxy V_M at M = m_ref. Row aux is the
/// gap |V_N - V_next| to the next row (paired over common paths); the proxy row's aux is the
/// sensitivity |V_M - V_{M/2}|.
inline StudyReport gamma_study(const LimitLaw& law, const Scenario& base, const SolverOptions& solver,
                               const StudyOptions& opts) {
  detail::check_ns(opts.ns);
  if (opts.m_ref <= opts.ns.back()) throw ConfigError("M_ref must exceed the largest N");
  detail::StudyClock clock;
  auto report = detail::new_report("gamma", base, opts);

  std::vector<std::size_t> sizes = opts.ns;
  sizes.push_back(opts.m_ref);
  std::vector<std::vector<double>> costs(sizes.size());
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    StudyRow row;
    row.n = sizes[j];
    try {
      auto solved = detail::solve_population(law, sizes[j], base, solver);
      row.value = solved.result.cost.value;
      row.se = solved.result.cost.se;
      if (solved.result.trace.stop_reason != "converged")
        row.status = solved.result.trace.stop_reason;
      costs[j] = std::move(solved.costs);
    } catch (const Error& e) {
      row.value = row.se = std::numeric_limits<double>::quiet_NaN();
      row.status = std::string("failed: ") + e.what();
    }
    report.rows.push_back(row);
  }
  for (std::size_t j = 0; j + 1 < sizes.size(); ++j) {
    if (costs[j].empty() || costs[j + 1].empty()) {
      report.rows[j].aux = report.rows[j].aux_se = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const auto d = detail::paired_difference(costs[j], costs[j + 1]);
    report.rows[j].aux = std::abs(d.value);
    report.rows[j].aux_se = d.se;
  }
  // Proxy sensitivity against M/2.
  auto& proxy = report.rows.back();
  const std::size_t half = opts.m_ref / 2;
  std::vector<double> half_costs;
  for (std::size_t j = 0; j < opts.ns.size(); ++j)
    if (opts.ns[j] == half) half_costs = costs[j];
  try {
    if (half_costs.empty() && half >= 1) half_costs = detail::solve_population(law, half, base, solver).costs;
    if (!costs.back().empty()) {
      const auto d = detail::paired_difference(costs.back(), half_costs);
      proxy.aux = std::abs(d.value);
      proxy.aux_se = d.se;
    }
  } catch (const Error& e) {
    proxy.aux = proxy.aux_se = std::numeric_limits<double>::quiet_NaN();
    report.notes.push_back(std::string("proxy sensitivity unavailable: ") + e.what());
  }
  report.notes.push_back("last row is the mean-field proxy at M = " + std::to_string(opts.m_ref) +
                         "; its aux is |V_M - V_{M/2}|");
  report.wall_seconds = clock.seconds();
  return report;
}

/// J_N^R of a fixed policy for each N, plus the particle estimate of J^R at M = m_ref (last
/// row). Each row's aux is |J_N^R - J^R| with a paired standard error.
inline StudyReport objective_convergence(const RandomizedPolicy& policy, const LimitLaw& law,
                                         const Scenario& base, const StudyOptions& opts) {
  detail::check_ns(opts.ns);
  if (opts.m_ref < opts.ns.back()) throw ConfigError("M_ref must be at least the largest N");
  detail::StudyClock clock;
  auto report = detail::new_report("objective", base, opts);
  const std::size_t paths = base.mc_paths;

  auto per_path = [&](std::size_t n) {
    const Scenario s = population(law, n, base);
    const NoiseBundle noise = sample_noise(scenario_grid(s), n, paths, base.seed);
    return path_costs(simulate_paths(s, policy.realize(noise), noise), s);
  };
  const auto ref = per_path(opts.m_ref);
  const auto ref_est = mean_and_se(ref);
  for (std::size_t n : opts.ns) {
    StudyRow row;
    row.n = n;
    try {
      const auto c = n == opts.m_ref ? ref : per_path(n);
      const auto est = mean_and_se(c);
      const auto d = detail::paired_difference(c, ref);
      row.value = est.value;
      row.se = est.se;
      row.aux = std::abs(d.value);
      row.aux_se = d.se;
    } catch (const Error& e) {
      row.value = row.se = std::numeric_limits<double>::quiet_NaN();
      row.status = std::string("failed: ") + e.what();
    }
    report.rows.push_back(row);
  }
  if (opts.ns.back() != opts.m_ref) report.rows.push_back({opts.m_ref, ref_est.value, ref_est.se, 0.0, 0.0, "ok"});
  report.notes.push_back("last row is the particle estimate of the mean-field cost");
  report.wall_seconds = clock.seconds();
  return report;
}

struct EquivalenceReport {
  std::string oracle_kind = "none";  // riccati, hjb or none
  double oracle_value = std::numeric_limits<double>::quiet_NaN();
  Estimate strong;        // optimize_picard
  Estimate weak;          // point mass at the computed optimum
  Estimate mixture;       // 50/50 mixture of the optimum and theta = projection of 0
  double allowance = 0.0; // discretization allowance in the oracle comparison
  bool oracle_vs_strong = true;
  bool strong_vs_weak = true;
  bool mixture_above = true;
  std::vector<std::string> notes;

  bool ok() const { return oracle_vs_strong && strong_vs_weak && mixture_above; }
};

/// Oracle value vs optimizer vs weak evaluation. The Riccati oracle applies when its
/// feedback never leaves Theta along the simulated paths; a single bank falls back to the
/// HJB solver; otherwise only the optimizer and weak values are compared.
inline EquivalenceReport equivalence_check(const Scenario& scenario, const SolverOptions& solver,
                                           double rel_allowance = 0.02) {
  scenario.validate();
  EquivalenceReport rep;
  const NoiseBundle noise =
      sample_noise(scenario_grid(scenario), scenario.n_banks(), scenario.mc_paths, scenario.seed);
  const auto opt = optimize_picard(scenario, noise, solver);
  rep.strong = opt.cost;
  rep.weak = evaluate_weak_cost(RandomizedPolicy::point_mass(opt.control), scenario, noise);
  const auto zero = OpenLoopControl::constant(scenario.steps, scenario.theta().project(0.0));
  rep.mixture = evaluate_weak_cost(RandomizedPolicy::mixture({opt.control, zero}, {0.5, 0.5}), scenario, noise);

  bool inactive = true;
  try {
    if (!scenario.random_initial()) {
      const auto sol = solve_riccati(scenario);
      const PolicySet wide{-std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
      const auto raw = simulate_paths(
          [&] {
            Scenario s = scenario;
            s.theta_lo = -1e300;
            s.theta_hi = 1e300;
            return s;
          }(),
          riccati_feedback_rule(sol, wide), noise);
      for (double v : raw.theta) inactive = inactive && scenario.theta().contains(v);
      if (inactive) {
        rep.oracle_kind = "riccati";
        std::vector<double> x0, y;
        for (const auto& d : scenario.init) {
          x0.push_back(d.x0);
          y.push_back(d.y);
        }
        rep.oracle_value = riccati_value(sol, x0, y);
      }
    } else {
      rep.oracle_kind = "riccati";
      rep.oracle_value = riccati_expected_value(scenario, scenario.mc_paths);
      rep.notes.push_back("random initial data: Riccati value averaged over the initial law");
    }
  } catch (const Error& e) {
    rep.notes.push_back(std::string("Riccati oracle failed: ") + e.what());
    inactive = false;
  }
  if (rep.oracle_kind == "none" && scenario.n_banks() == 1 && !scenario.random_initial()) {
    const auto surf = solve_hjb_1d(scenario);
    rep.oracle_kind = "hjb";
    rep.oracle_value = surf.value_at(0, scenario.init[0].x0);
  }
  if (rep.oracle_kind == "none") rep.notes.push_back("constraint active with N >= 2: oracle unavailable");

  rep.allowance = rel_allowance * std::abs(rep.strong.value);
  if (rep.oracle_kind != "none")
    rep.oracle_vs_strong = std::abs(rep.oracle_value - rep.strong.value) < 3 * rep.strong.se + rep.allowance;
  rep.strong_vs_weak = std::abs(rep.strong.value - rep.weak.value) <=
                       3 * std::hypot(rep.strong.se, rep.weak.se) + 1e-12 * std::abs(rep.strong.value);
  rep.mixture_above = rep.mixture.value >= rep.strong.value - 3 * rep.mixture.se;
  return rep;
}

/// Mean over repetitions of d_S between the N-bank empirical flow and the M-particle
/// reference flow sharing the same common noise, control and nested draws.
inline StudyReport chaos_diagnostic(const LimitLaw& law, const ControlSpec& theta, const Scenario& base,
                                    const StudyOptions& opts, const W2Options& w2 = {}) {
  detail::check_ns(opts.ns);
  detail::StudyClock clock;
  auto report = detail::new_report("chaos", base, opts);
  MkvOptions mo;
  mo.reps = opts.reps;
  const auto ref = simulate_mkv(law, theta, std::max<std::size_t>(opts.m_ref, 2), base, mo);
  bool all_exact = true;
  for (std::size_t n : opts.ns) {
    StudyRow row;
    row.n = n;
    try {
      const Scenario s = population(law, n, base);
      const NoiseBundle noise = sample_noise(scenario_grid(s), n, opts.reps, base.seed);
      const auto paths = simulate_paths(s, theta, noise);
      std::vector<double> d(opts.reps);
      for (std::size_t r = 0; r < opts.reps; ++r) {
        const auto res = flow_distance(flow_from_paths(paths, s.banks, r), ref.flow(r), w2);
        d[r] = res.value;
        all_exact = all_exact && res.exact;
      }
      const auto est = mean_and_se(d);
      row.value = est.value;
      row.se = est.se;
    } catch (const Error& e) {
      row.value = row.se = std::numeric_limits<double>::quiet_NaN();
      row.status = std::string("failed: ") + e.what();
    }
    report.rows.push_back(row);
  }
  if (!all_exact) report.notes.push_back("some distances use the sliced approximation");
  report.wall_seconds = clock.seconds();
  return report;
}

/// The optimal open-loop control of the M-bank system replayed on the first N banks (a
/// randomized control for the N-bank problem). value = J_N^R(Q*), aux = J_N^R(Q*) - V_N.
inline StudyReport replay_study(const LimitLaw& law, const Scenario& base, const SolverOptions& solver,
                                const StudyOptions& opts) {
  detail::check_ns(opts.ns);
  detail::StudyClock clock;
  auto report = detail::new_report("replay", base, opts);
  const auto big = detail::solve_population(law, opts.m_ref, base, solver);
  for (std::size_t n : opts.ns) {
    StudyRow row;
    row.n = n;
    try {
      const auto own = detail::solve_population(law, n, base, solver);
      const auto replay = path_costs(simulate_paths(own.scenario, big.result.control, own.noise), own.scenario);
      const auto est = mean_and_se(replay);
      const auto d = detail::paired_difference(replay, own.costs);
      row.value = est.value;
      row.se = est.se;
      row.aux = d.value;
      row.aux_se = d.se;
    } catch (const Error& e) {
      row.value = row.se = std::numeric_limits<double>::quiet_NaN();
      row.status = std::string("failed: ") + e.what();
    }
    report.rows.push_back(row);
  }
  report.wall_seconds = clock.seconds();
  return report;
}

}  // namespace sysrisk
