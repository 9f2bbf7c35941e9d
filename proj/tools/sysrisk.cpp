// Command-line front end: every subcommand reads a scenario file, writes CSV tables and a
// manifest.json into --out, and reports failures as one machine-readable line on stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sysrisk/sysrisk.hpp"

namespace fs = std::filesystem;
using namespace sysrisk;

namespace {

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  unsigned threads = 0;
};

struct Extra {
  double theta = 0.0;
  bool theta_set = false;
  std::size_t particles = 0;
  std::string mode = "direct";
  std::string scheme = "crank_nicolson";
  std::size_t nodes = 401;
  double radius = 0.0;
  std::vector<double> epsilons{1e-1, 1e-2, 1e-3, 1e-4};
  std::size_t pairs = 4;
  std::size_t truncation = 64;
};

class Run {
 public:
  Run(std::string command, const Common& c, std::vector<std::string> argv)
      : command_(std::move(command)), common_(c), start_(std::chrono::steady_clock::now()) {
    manifest_.command = command_;
    manifest_.argv = std::move(argv);
    cfg_ = parse_config(c.config);
    if (c.seed) apply_seed(cfg_, *c.seed);
    if (c.paths) {
      if (*c.paths == 0) throw ConfigError("--paths must be >= 1");
      cfg_.scenario.mc_paths = *c.paths;
    }
    cfg_.scenario.validate();
    cfg_.study.config_text = serialize_config(cfg_);
    fs::create_directories(c.out);
  }

  RunConfig& config() { return cfg_; }
  Scenario& scenario() { return cfg_.scenario; }

  void csv(const std::string& name, const CsvTable& t) {
    write_csv(t, fs::path(common_.out) / name);
    manifest_.outputs.push_back(name);
  }
  void text(const std::string& name, const std::string& body) {
    write_text_file(fs::path(common_.out) / name, body);
    manifest_.outputs.push_back(name);
  }
  void note(std::string s) { manifest_.diagnostics.push_back(std::move(s)); }

  void finish() {
    manifest_.config_text = cfg_.study.config_text;
    manifest_.defaults = cfg_.defaults;
    manifest_.seed = cfg_.scenario.seed;
    manifest_.threads = thread_count();
    manifest_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_manifest(manifest_, fs::path(common_.out) / "manifest.json");
  }

 private:
  std::string command_;
  Common common_;
  std::chrono::steady_clock::time_point start_;
  RunConfig cfg_;
  RunManifest manifest_;
};

NoiseBundle noise_for(const Scenario& s) {
  return sample_noise(scenario_grid(s), s.n_banks(), s.mc_paths, s.seed);
}

double chosen_theta(const Scenario& s, const Extra& x) {
  return x.theta_set ? x.theta : project_theta(0.0, s.theta_lo, s.theta_hi);
}

CsvTable cost_table(const std::vector<std::pair<std::string, Estimate>>& rows) {
  CsvTable t{{"metric", "value", "se", "samples"}, {}};
  for (const auto& [name, e] : rows) t.add({name, e.value, e.se, static_cast<long long>(e.samples)});
  return t;
}

CsvTable summary_table(const std::vector<EnsembleSummaryRow>& rows) {
  CsvTable t{{"rep", "t", "mean_X", "var_X", "gap"}, {}};
  for (const auto& r : rows) t.add({static_cast<long long>(r.rep), r.t, r.mean_x, r.var_x, r.gap});
  return t;
}

CsvTable control_table(const OpenLoopControl& c, const TimeGrid& g) {
  CsvTable t{{"step", "t", "theta_mean", "theta_min", "theta_max"}, {}};
  for (std::size_t k = 0; k < c.steps; ++k) {
    double m = 0.0, lo = c.at(0, k), hi = lo;
    for (std::size_t p = 0; p < c.paths; ++p) {
      const double v = c.at(p, k);
      m += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    t.add({static_cast<long long>(k), g.knot(k), m / static_cast<double>(c.paths), lo, hi});
  }
  return t;
}

ParticleEnsemble wrap_ensemble(const Scenario& s, const PathBundle& paths, const NoiseBundle& noise) {
  ParticleEnsemble e;
  e.scenario = s;
  e.paths = paths;
  e.noise = noise;
  return e;
}

// ------------------------------------------------------------------------------------

void cmd_simulate(Run& run, const Extra& x) {
  const Scenario& s = run.scenario();
  const double th = chosen_theta(s, x);
  const auto noise = noise_for(s);
  const auto paths = simulate_paths(s, OpenLoopControl::constant(s.steps, th), noise);
  run.csv("summary.csv", summary_table(ensemble_summary(wrap_ensemble(s, paths, noise))));
  run.csv("cost.csv", cost_table({{"cost", mean_and_se(path_costs(paths, s))}}));
  const auto mr = moment_report(paths, s.rho_exp);
  CsvTable m{{"delta", "modulus"}, {}};
  for (std::size_t i = 0; i < mr.deltas.size(); ++i) m.add({mr.deltas[i], mr.modulus[i]});
  run.csv("moments.csv", m);
  run.note("theta=" + format_double(th));
  run.note("max_sup_moment=" + format_double(mr.max_sup_moment()));
}

void cmd_optimize(Run& run, const Extra&) {
  const Scenario& s = run.scenario();
  const auto noise = noise_for(s);
  const auto res = optimize_picard(s, noise, run.config().solver);
  run.csv("trace.csv", trace_table(res.trace));
  run.csv("control.csv", control_table(res.control, scenario_grid(s)));
  run.csv("cost.csv", cost_table({{"cost", res.cost}}));
  run.note("stop_reason=" + res.trace.stop_reason);
  run.note("fixed_point_residual=" + format_double(res.fixed_point_residual));
  run.note("ridge_fallbacks=" + std::to_string(res.ridge_fallbacks));
}

void cmd_riccati(Run& run, const Extra&) {
  const Scenario& s = run.scenario();
  std::vector<double> y;
  for (std::size_t i = 0; i < s.n_banks(); ++i) y.push_back(s.initial(0, i).y);
  // P does not depend on the target, so one solve serves the table for random targets too.
  const auto sol = solve_riccati(s, y);
  std::vector<std::pair<std::string, Estimate>> rows;
  if (s.random_initial()) {
    rows.push_back({"expected_value", Estimate{riccati_expected_value(s, s.mc_paths), 0.0, s.mc_paths}});
  } else {
    std::vector<double> x0;
    for (const auto& d : s.init) x0.push_back(d.x0);
    rows.push_back({"value", Estimate{riccati_value(sol, x0, y), 0.0, 1}});
  }
  rows.push_back({"min_eigenvalue", Estimate{sol.min_eigenvalue, 0.0, 1}});
  run.csv("value.csv", cost_table(rows));
  CsvTable p{{"knot", "t", "i", "j", "P"}, {}};
  for (std::size_t k = 0; k < sol.grid.knots(); ++k)
    for (Eigen::Index i = 0; i < sol.p[k].rows(); ++i)
      for (Eigen::Index j = 0; j < sol.p[k].cols(); ++j)
        p.add({static_cast<long long>(k), sol.grid.knot(k), static_cast<long long>(i),
               static_cast<long long>(j), sol.p[k](i, j)});
  run.csv("riccati.csv", p);
}

void cmd_hjb1d(Run& run, const Extra& x) {
  const Scenario& s = run.scenario();
  HjbOptions o;
  o.space_nodes = x.nodes;
  o.radius = x.radius;
  if (x.scheme == "explicit_euler") o.scheme = HjbScheme::explicit_euler;
  else if (x.scheme == "implicit_euler") o.scheme = HjbScheme::implicit_euler;
  else if (x.scheme == "crank_nicolson") o.scheme = HjbScheme::crank_nicolson;
  else throw ConfigError("unknown HJB scheme '" + x.scheme + "'");
  const auto surf = solve_hjb_1d(s, o);
  CsvTable t{{"x", "value_t0", "theta_t0"}, {}};
  for (std::size_t m = 0; m < surf.nodes; ++m) t.add({surf.x(m), surf.v(0, m), surf.theta_star(0, m)});
  run.csv("hjb.csv", t);
  run.csv("value.csv", cost_table({{"value", {surf.value_at(0, s.init[0].x0), 0.0, 1}}}));
}

void cmd_meanfield(Run& run, const Extra& x) {
  const Scenario& s = run.scenario();
  const LimitLaw law = limit_law_of(s);
  MkvOptions mo;
  mo.reps = s.mc_paths;
  if (x.mode == "picard") mo.mode = MkvMode::picard;
  else if (x.mode != "direct") throw ConfigError("unknown mean-field mode '" + x.mode + "'");
  mo.tol = run.config().solver.tol;
  const std::size_t m = x.particles ? x.particles : std::max<std::size_t>(run.config().bank_count, 2);
  const auto e = simulate_mkv(law, OpenLoopControl::constant(s.steps, chosen_theta(s, x)), m, s, mo);
  run.csv("ensemble.csv", summary_table(ensemble_summary(e)));
  run.csv("cost.csv", cost_table({{"mf_cost", evaluate_mf_cost(e)}}));
  run.note("particles=" + std::to_string(m));
  run.note("sweeps=" + std::to_string(e.sweeps));
  run.note(std::string("converged=") + (e.converged ? "true" : "false"));
}

void cmd_fpk_check(Run& run, const Extra& x) {
  const Scenario& s = run.scenario();
  const LimitLaw law = limit_law_of(s);
  MkvOptions mo;
  mo.reps = s.mc_paths;
  const std::size_t m = x.particles ? x.particles : std::max<std::size_t>(run.config().bank_count, 2);
  const auto e = simulate_mkv(law, OpenLoopControl::constant(s.steps, chosen_theta(s, x)), m, s, mo);
  const auto phis = default_test_family(std::max(terminal_spread(e), 1e-3));
  CsvTable t{{"phi_id", "t", "residual", "rep"}, {}};
  double worst = 0.0;
  for (std::size_t r = 0; r < e.reps(); ++r) {
    const auto res = sfpk_residual(e, r, phis);
    worst = std::max(worst, res.sup_rms());
    for (std::size_t f = 0; f < res.residual.size(); ++f)
      for (std::size_t k = 0; k < res.residual[f].size(); ++k)
        t.add({res.names[f], e.paths.grid.knot(k), res.residual[f][k], static_cast<long long>(r)});
  }
  run.csv("residuals.csv", t);
  run.note("max_sup_rms=" + format_double(worst));
}

void cmd_grad_check(Run& run, const Extra& x) {
  const Scenario& s = run.scenario();
  const auto noise = noise_for(s);
  const double th = chosen_theta(s, x);
  // Constant direction pointing into Theta, short enough that theta + h stays admissible.
  const double room_up = s.theta_hi - th, room_down = th - s.theta_lo;
  const double room = std::max(room_up, room_down);
  if (!(room > 0)) throw ConfigError("grad-check needs a nondegenerate policy interval", "A_Theta");
  const double h = (room_up >= room_down ? 1.0 : -1.0) * std::min(1.0, room);
  for (double eps : x.epsilons)
    if (!(eps > 0 && eps <= 1)) throw ConfigError("--eps values must lie in (0, 1]");
  const auto rows = gradient_check(OpenLoopControl::constant(s.steps, th),
                                   OpenLoopControl::constant(s.steps, h), s, noise, x.epsilons);
  run.note("direction=" + format_double(h));
  CsvTable t{{"epsilon", "fd_derivative", "gateaux", "rel_err"}, {}};
  for (const auto& r : rows) t.add({r.epsilon, r.fd_derivative, r.gateaux, r.rel_err});
  run.csv("gradcheck.csv", t);
}

void cmd_gamma_study(Run& run, const Extra&) {
  const Scenario& s = run.scenario();
  const auto report = gamma_study(limit_law_of(s), s, run.config().solver, run.config().study);
  run.csv("study.csv", study_table(report));
  run.text("study.svg", study_svg(report));
  for (const auto& n : report.notes) run.note(n);
  for (const auto& r : report.rows)
    if (r.status != "ok") run.note("N=" + std::to_string(r.n) + ": " + r.status);
}

void cmd_metrics(Run& run, const Extra& x) {
  const Scenario& s = run.scenario();
  if (s.mc_paths < 2) throw ConfigError("metrics needs at least 2 paths");
  const auto noise = noise_for(s);
  const auto paths = simulate_paths(s, OpenLoopControl::constant(s.steps, chosen_theta(s, x)), noise);
  CsvTable t{{"id", "metric", "value", "exact_flag", "tail_bound"}, {}};
  const auto f0 = flow_point_from_simulation(s, paths, 0);
  const auto c0 = canonical_from_simulation(s, paths, noise, 0);
  const std::size_t pairs = std::min(x.pairs, s.mc_paths - 1);
  for (std::size_t q = 1; q <= pairs; ++q) {
    const auto m = composite_metrics(f0, c0, flow_point_from_simulation(s, paths, q),
                                     canonical_from_simulation(s, paths, noise, q), x.truncation);
    const long long id = static_cast<long long>(q);
    const long long ex = m.exact ? 1 : 0;
    t.add({id, std::string("d_hat_S"), m.d_hat_s, ex, 0.0});
    t.add({id, std::string("d_Omega"), m.d_omega, 1LL, m.tail_bound});
    t.add({id, std::string("d1"), m.d1, 1LL, m.tail_bound});
    t.add({id, std::string("d2"), m.d2, 1LL, 0.0});
    t.add({id, std::string("d3"), m.d3, 1LL, m.tail_bound});
    t.add({id, std::string("d4"), m.d4, 1LL, 0.0});
  }
  run.csv("metrics.csv", t);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Systemic-risk control toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  Common common;
  Extra extra;
  using Handler = void (*)(Run&, const Extra&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands{
      {"simulate", "Simulate the N-bank system under a constant control", cmd_simulate},
      {"optimize", "Damped projected fixed-point optimization of the control", cmd_optimize},
      {"riccati", "Unconstrained LQ value via the Riccati equations", cmd_riccati},
      {"hjb1d", "Finite-difference HJB for a single bank", cmd_hjb1d},
      {"meanfield", "Particle approximation of the mean-field system", cmd_meanfield},
      {"fpk-check", "Stochastic Fokker-Planck residuals of a particle ensemble", cmd_fpk_check},
      {"grad-check", "Finite differences against the adjoint directional derivative", cmd_grad_check},
      {"gamma-study", "Optimal values across N against a large-M proxy", cmd_gamma_study},
      {"metrics", "Product-space distances between simulated paths", cmd_metrics}};

  std::vector<CLI::App*> subs;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", common.config, "Scenario file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Override the scenario seed");
    sub->add_option("--paths", common.paths, "Override the Monte Carlo path count");
    sub->add_option("--threads", common.threads, "Worker threads (0: hardware)");
    if (name == "simulate" || name == "meanfield" || name == "fpk-check" || name == "grad-check" ||
        name == "metrics")
      sub->add_option_function<double>(
          "--theta", [&](double v) { extra.theta = v; extra.theta_set = true; }, "Constant control");
    if (name == "meanfield" || name == "fpk-check")
      sub->add_option("--particles", extra.particles, "Particle count (default: bank count)");
    if (name == "meanfield")
      sub->add_option("--mode", extra.mode, "direct or picard")->check(CLI::IsMember({"direct", "picard"}));
    if (name == "hjb1d") {
      sub->add_option("--scheme", extra.scheme, "crank_nicolson, implicit_euler or explicit_euler");
      sub->add_option("--nodes", extra.nodes, "Space nodes");
      sub->add_option("--radius", extra.radius, "Half-width of the space grid (0: automatic)");
    }
    if (name == "grad-check") sub->add_option("--eps", extra.epsilons, "Finite-difference steps");
    if (name == "metrics") {
      sub->add_option("--pairs", extra.pairs, "Number of path pairs");
      sub->add_option("--truncation", extra.truncation, "Terms kept in the bounded sums");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: kind=usage_error message=" << e.what() << "\n";
    return 2;
  }

  try {
    if (common.threads) set_thread_count(common.threads);
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      Run run(std::get<0>(commands[i]), common, std::vector<std::string>(argv + 1, argv + argc));
      try {
        std::get<2>(commands[i])(run, extra);
      } catch (const std::exception& e) {
        // The manifest is still written so a failed run can be reproduced.
        run.note(std::string("failed: ") + e.what());
        run.finish();
        throw;
      }
      run.finish();
    }
  } catch (const Error& e) {
    std::cerr << "error: kind=" << e.kind() << " message=" << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: kind=internal_error message=" << e.what() << "\n";
    return 1;
  }
  return 0;
}
