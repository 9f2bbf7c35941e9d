#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "sysrisk/sde.hpp"

using namespace sysrisk;

TEST(TimeGrid, Knots) {
  const auto g = make_time_grid(1.0, 4);
  ASSERT_EQ(g.knots(), 5u);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(g.knot(k), 0.25 * static_cast<double>(k));
  const auto g2 = make_time_grid(2.0, 1);
  EXPECT_EQ(g2.knot(0), 0.0);
  EXPECT_EQ(g2.knot(1), 2.0);
  EXPECT_THROW(make_time_grid(1.0, 0), ConfigError);
  EXPECT_THROW(make_time_grid(0.0, 3), ConfigError);
}

TEST(Noise, DeterministicAndOrderFree) {
  const auto g = make_time_grid(1.0, 8);
  set_thread_count(1);
  const auto a = sample_noise(g, 3, 50, 42);
  set_thread_count(4);
  const auto b = sample_noise(g, 3, 50, 42);
  set_thread_count(0);
  EXPECT_EQ(a.common, b.common);
  EXPECT_EQ(a.idiosyncratic, b.idiosyncratic);
  // A bundle with more banks and paths extends the smaller one.
  const auto c = sample_noise(g, 5, 80, 42);
  for (std::size_t p = 0; p < 50; ++p)
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_EQ(a.dw0(p, k), c.dw0(p, k));
      for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.dw(p, k, i), c.dw(p, k, i));
    }
  EXPECT_THROW(sample_noise(g, 3, 0, 1), ConfigError);
}

TEST(Noise, MeanAndIndependence) {
  const auto g = make_time_grid(1.0, 1);
  const std::size_t n = 100000;
  const auto nb = sample_noise(g, 1, n, 2024);
  double m0 = 0, m1 = 0, s00 = 0, s11 = 0, s01 = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double a = nb.dw0(p, 0), b = nb.dw(p, 0, 0);
    m0 += a;
    m1 += b;
    s00 += a * a;
    s11 += b * b;
    s01 += a * b;
  }
  const double dn = static_cast<double>(n);
  m0 /= dn;
  m1 /= dn;
  EXPECT_LT(std::abs(m0), 3.0 * std::sqrt(g.dt() / dn));
  EXPECT_LT(std::abs(m1), 3.0 * std::sqrt(g.dt() / dn));
  const double corr = (s01 / dn - m0 * m1) /
                      std::sqrt((s00 / dn - m0 * m0) * (s11 / dn - m1 * m1));
  EXPECT_LT(std::abs(corr), 0.02);
}

TEST(Simulate, FrozenWithoutDriftNoiseControl) {
  auto s = fixtures::scalar();
  s.banks = {{0.0, 1.0, 0.0}, {0.0, 2.0, 0.0}};
  s.init = {{1.0, 0.0}, {-2.0, 0.0}};
  const auto nb = sample_noise(scenario_grid(s), 2, 3, 1);
  const auto pb = simulate_paths(s, OpenLoopControl::constant(s.steps, 0.0), nb);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t k = 0; k <= s.steps; ++k) {
      EXPECT_EQ(pb.state(p, k, 0), 1.0);
      EXPECT_EQ(pb.state(p, k, 1), -2.0);
    }
}

TEST(Simulate, TwoBankGapDecay) {
  auto s = fixtures::scalar();
  s.banks = {{2.0, 1.0, 0.0}, {2.0, 1.0, 0.0}};
  s.init = {{0.0, 0.0}, {2.0, 0.0}};
  for (std::size_t steps : {100u, 200u}) {
    s.steps = steps;
    const auto nb = sample_noise(scenario_grid(s), 2, 1, 1);
    const auto pb = simulate_paths(s, OpenLoopControl::constant(steps, 0.0), nb);
    double err = 0;
    for (std::size_t k = 0; k <= steps; ++k) {
      const double t = pb.grid.knot(k);
      err = std::max(err, std::abs(pb.state(0, k, 0) - pb.state(0, k, 1) + 2.0 * std::exp(-2.0 * t)));
    }
    EXPECT_LT(err, 2.0 * pb.grid.dt());
  }
}

TEST(Simulate, MatchesMatrixExponential) {
  auto s = fixtures::hetero4();
  for (auto& b : s.banks) b.sigma = 0;
  s.sigma0 = 0;
  s.steps = 400;
  const auto nb = sample_noise(scenario_grid(s), 4, 1, 1);
  const auto pb = simulate_paths(s, OpenLoopControl::constant(s.steps, 0.0), nb);
  const Eigen::MatrixXd a = build_drift_matrix(s.banks);
  Eigen::VectorXd x0(4);
  for (int i = 0; i < 4; ++i) x0(i) = s.init[static_cast<std::size_t>(i)].x0;
  // Exact flow via eigen-decomposition of the (diagonalizable) drift.
  Eigen::EigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::MatrixXcd v = es.eigenvectors();
  const Eigen::VectorXcd lam = es.eigenvalues();
  const Eigen::VectorXcd c = v.fullPivLu().solve(x0.cast<std::complex<double>>());
  double err = 0;
  for (std::size_t k = 0; k <= s.steps; ++k) {
    const double t = pb.grid.knot(k);
    const Eigen::VectorXcd et = (lam * t).array().exp();
    const Eigen::VectorXd xt = (v * (et.array() * c.array()).matrix()).real();
    for (int i = 0; i < 4; ++i) err = std::max(err, std::abs(xt(i) - pb.state(0, k, static_cast<std::size_t>(i))));
  }
  EXPECT_LT(err, 2.0 * pb.grid.dt());
}

TEST(Simulate, IncrementCovarianceFromVolatility) {
  auto s = fixtures::scalar();
  s.banks = {{0.0, 1.0, 0.3}, {0.0, 1.0, 0.5}};
  s.init = {{0.0, 0.0}, {0.0, 0.0}};
  s.sigma0 = 0.4;
  s.steps = 1;
  const std::size_t n = 100000;
  const auto nb = sample_noise(scenario_grid(s), 2, n, 77);
  const auto pb = simulate_paths(s, OpenLoopControl::constant(1, 0.0), nb);
  auto cov_check = [&](std::size_t i, std::size_t j, double expected) {
    std::vector<double> prod(n);
    double mi = 0, mj = 0;
    for (std::size_t p = 0; p < n; ++p) {
      mi += pb.state(p, 1, i);
      mj += pb.state(p, 1, j);
    }
    mi /= static_cast<double>(n);
    mj /= static_cast<double>(n);
    double m = 0, ss = 0;
    for (std::size_t p = 0; p < n; ++p) {
      prod[p] = (pb.state(p, 1, i) - mi) * (pb.state(p, 1, j) - mj);
      m += prod[p];
    }
    m /= static_cast<double>(n);
    for (double v : prod) ss += (v - m) * (v - m);
    const double se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    EXPECT_LT(std::abs(m - expected), 3.0 * se) << i << "," << j;
  };
  const double dt = 1.0;
  cov_check(0, 1, 0.16 * dt);
  cov_check(0, 0, (0.16 + 0.09) * dt);
  cov_check(1, 1, (0.16 + 0.25) * dt);
}

TEST(Simulate, RejectsInadmissibleAndMismatch) {
  auto s = fixtures::scalar(-1.0, 1.0, 4);
  const auto nb = sample_noise(scenario_grid(s), 1, 2, 1);
  EXPECT_THROW(simulate_paths(s, OpenLoopControl::constant(4, 1.5), nb), AdmissibilityError);
  EXPECT_THROW(simulate_paths(s, OpenLoopControl::constant(3, 0.0), nb), DimensionError);
  const auto nb2 = sample_noise(scenario_grid(s), 2, 2, 1);
  EXPECT_THROW(simulate_paths(s, OpenLoopControl::constant(4, 0.0), nb2), DimensionError);
}

TEST(Simulate, ThreadCountInvariant) {
  auto s = fixtures::hetero4();
  const auto nb = sample_noise(scenario_grid(s), 4, 64, 5);
  set_thread_count(1);
  const auto a = simulate_paths(s, OpenLoopControl::constant(s.steps, 0.3), nb);
  set_thread_count(3);
  const auto b = simulate_paths(s, OpenLoopControl::constant(s.steps, 0.3), nb);
  set_thread_count(0);
  EXPECT_EQ(a.x, b.x);
}

TEST(Moments, ConstantPathsAndUniformBound) {
  auto s = fixtures::scalar(-1.0, 1.0, 16);
  s.init = {{2.0, 0.0}};
  const auto nb = sample_noise(scenario_grid(s), 1, 4, 1);
  const auto frozen = simulate_paths(s, OpenLoopControl::constant(16, 0.0), nb);
  const auto rep = moment_report(frozen, 1.0);
  EXPECT_DOUBLE_EQ(rep.sup_moment[0], 8.0);

  auto h = fixtures::hetero4();
  h.theta_lo = -1;
  h.theta_hi = 1;
  const auto noise = sample_noise(scenario_grid(h), 4, 2000, 9);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> ud(-1, 1);
  double lo = 1e300, hi = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> th(h.steps);
    for (auto& v : th) v = ud(gen);
    const auto pb = simulate_paths(h, OpenLoopControl::deterministic(th), noise);
    const auto r = moment_report(pb, h.rho_exp);
    lo = std::min(lo, r.max_sup_moment());
    hi = std::max(hi, r.max_sup_moment());
    for (std::size_t j = 1; j < r.deltas.size(); ++j) EXPECT_LE(r.modulus[j], r.modulus[j - 1]);
  }
  EXPECT_LT(hi / lo, 10.0);
}

TEST(Moments, ModulusShrinksWithWindow) {
  auto h = fixtures::hetero4();
  h.steps = 64;
  const auto noise = sample_noise(scenario_grid(h), 4, 1000, 3);
  const auto pb = simulate_paths(h, OpenLoopControl::constant(64, 0.0), noise);
  const std::vector<double> deltas{h.horizon / 8, h.horizon / 64};
  const auto r = moment_report(pb, 1.0, deltas);
  EXPECT_GT(r.modulus[0], r.modulus[1]);
}
