#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "sysrisk/control.hpp"
#include "sysrisk/lq_oracle.hpp"

using namespace sysrisk;

namespace {
double scalar_value_closed_form(double alpha, double lambda, double t_left) {
  // P(t) = lambda alpha / (lambda + alpha (T - t)) for x' = theta, zero noise.
  return lambda * alpha / (lambda + alpha * t_left);
}
}  // namespace

TEST(Riccati, ZeroCostGivesZeroSolution) {
  auto s = fixtures::hetero4();
  s.alpha = 0;
  s.beta = 0;
  const auto sol = solve_riccati(s);
  for (std::size_t k = 0; k < sol.grid.knots(); ++k) {
    EXPECT_EQ(sol.p[k].cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(sol.r[k].cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(sol.s[k], 0.0);
  }
}

TEST(Riccati, ScalarClosedForm) {
  const auto s = fixtures::scalar();
  const auto sol = solve_riccati(s);
  for (std::size_t k = 0; k < sol.grid.knots(); ++k)
    EXPECT_NEAR(sol.p[k](0, 0), scalar_value_closed_form(1, 1, 1 - sol.grid.knot(k)), 1e-9);
  const std::vector<double> x0{1.0}, y{0.0};
  EXPECT_NEAR(riccati_value(sol, x0, y), 0.5, 1e-6);
  EXPECT_NEAR(riccati_feedback(sol, 0.0, x0, y, {-10, 10}), -0.5, 1e-9);
  EXPECT_NEAR(riccati_feedback(sol, 0.0, x0, y, {-0.1, 0.1}), -0.1, 0.0);
  EXPECT_EQ(riccati_feedback(sol, 0.3, y, y, {-10, 10}), 0.0);
}

TEST(Riccati, TerminalConditionAndPsd) {
  const auto s = fixtures::hetero4();
  const auto sol = solve_riccati(s);
  const auto n = static_cast<Eigen::Index>(s.n_banks());
  EXPECT_LT((sol.p.back() - (s.alpha / 4.0) * Eigen::MatrixXd::Identity(n, n)).norm(), 1e-15);
  EXPECT_EQ(sol.r.back().norm(), 0.0);
  EXPECT_EQ(sol.s.back(), 0.0);
  EXPECT_GE(sol.min_eigenvalue, -1e-10);
  for (const auto& p : sol.p) EXPECT_LT((p - p.transpose()).norm(), 1e-14);
}

TEST(Riccati, OnTargetValueIsNoiseTerm) {
  auto s = fixtures::hetero4();
  s.beta = 0;
  for (auto& d : s.init) d.x0 = d.y;
  const auto sol = solve_riccati(s);
  EXPECT_NEAR(riccati_value(sol, fixtures::x0_of(s), fixtures::y_of(s)),
              sol.s[0] + 2.0 * 0.0, 1e-15);
}

TEST(Riccati, FourthOrderRefinement) {
  auto s = fixtures::hetero4();
  std::vector<double> v;
  for (std::size_t m : {10u, 20u, 40u, 1280u}) {
    s.steps = m;
    v.push_back(riccati_value(solve_riccati(s), fixtures::x0_of(s), fixtures::y_of(s)));
  }
  const double e1 = std::abs(v[0] - v[3]), e2 = std::abs(v[1] - v[3]), e3 = std::abs(v[2] - v[3]);
  EXPECT_NEAR(e1 / e2, 16.0, 3.0);
  EXPECT_NEAR(e2 / e3, 16.0, 3.0);
}

TEST(Riccati, TargetMismatchDetected) {
  const auto s = fixtures::hetero4();
  const auto sol = solve_riccati(s);
  std::vector<double> y{1.0, 2.0, 3.0, 4.0};
  EXPECT_THROW(riccati_value(sol, fixtures::x0_of(s), y), ConfigError);
}

TEST(Riccati, BelowMonteCarloCostOfRandomControls) {
  auto s = fixtures::hetero4();
  const double v = riccati_value(solve_riccati(s), fixtures::x0_of(s), fixtures::y_of(s));
  const auto noise = sample_noise(scenario_grid(s), 4, 4000, 5);
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> ud(-2, 2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> th(s.steps);
    for (auto& x : th) x = ud(gen);
    const auto est = evaluate_strong_cost(OpenLoopControl::deterministic(th), s, noise);
    EXPECT_LE(v, est.value + 3 * est.se);
  }
}

TEST(Riccati, FeedbackCostMatchesValue) {
  // Simulating the optimal feedback reproduces the value within Monte Carlo error plus
  // time-discretization error.
  auto s = fixtures::hetero4();
  s.steps = 100;
  const auto sol = solve_riccati(s);
  const double v = riccati_value(sol, fixtures::x0_of(s), fixtures::y_of(s));
  const auto noise = sample_noise(scenario_grid(s), 4, 4000, 11);
  const auto est = evaluate_strong_cost(riccati_feedback_rule(sol, s.theta()), s, noise);
  EXPECT_NEAR(est.value, v, 3 * est.se + 0.02 * v);
}

TEST(Hjb, ScalarUnconstrained) {
  auto s = fixtures::scalar();
  s.steps = 400;
  const auto surf = solve_hjb_1d(s, {401, 0, 0, HjbScheme::crank_nicolson});
  EXPECT_NEAR(surf.value_at(0, 1.0), 0.5, 1e-3);
}

TEST(Hjb, DegenerateIntervalAndClamp) {
  auto s = fixtures::scalar(0.0, 0.0, 200);
  auto surf = solve_hjb_1d(s);
  EXPECT_NEAR(surf.value_at(0, 1.0), 1.0, 1e-6);
  s = fixtures::scalar(-0.1, 0.1, 200);
  surf = solve_hjb_1d(s);
  EXPECT_NEAR(surf.value_at(0, 1.0), 0.82, 1e-2);
  EXPECT_NEAR(surf.feedback_at(0, 1.0), -0.1, 1e-12);
}

TEST(Hjb, AgreesWithRiccatiStochastic) {
  auto s = fixtures::scalar();
  s.banks[0].sigma = 0.3;
  s.sigma0 = 0.2;
  s.beta = 0.5;
  s.init = {{0.8, 0.1}};
  s.steps = 400;
  const double v = riccati_value(solve_riccati(s), std::vector<double>{0.8}, std::vector<double>{0.1});
  for (auto scheme : {HjbScheme::implicit_euler, HjbScheme::crank_nicolson}) {
    const auto surf = solve_hjb_1d(s, {401, 0, 0, scheme});
    EXPECT_LT(std::abs(surf.value_at(0, 0.8) - v) / v, 1e-3) << static_cast<int>(scheme);
  }
}

TEST(Hjb, FeedbackSelfConsistent) {
  auto s = fixtures::scalar(-0.3, 0.3, 200);
  s.banks[0].sigma = 0.3;
  s.beta = 1.0;
  const auto surf = solve_hjb_1d(s, {201, 0, 0, HjbScheme::implicit_euler});
  for (std::size_t m = 1; m + 1 < surf.nodes; m += 7) {
    const double vx = (surf.v(0, m + 1) - surf.v(0, m - 1)) / (2 * surf.dx);
    EXPECT_NEAR(surf.theta_star(0, m), project_theta(-vx / 2.0, -0.3, 0.3), 1e-12);
  }
}

TEST(Hjb, CflGuardAndShape) {
  auto s = fixtures::scalar();
  s.banks[0].sigma = 1.0;
  s.steps = 10;
  EXPECT_THROW(solve_hjb_1d(s, {801, 0, 0, HjbScheme::explicit_euler}), ConfigError);
  EXPECT_NO_THROW(solve_hjb_1d(s, {801, 0, 0, HjbScheme::implicit_euler}));
  auto two = fixtures::hetero4();
  EXPECT_THROW(solve_hjb_1d(two), ConfigError);
}

TEST(Hjb, RadiusDoublingStable) {
  auto s = fixtures::scalar();
  s.banks[0].sigma = 0.4;
  s.steps = 200;
  const double r = default_hjb_radius(s);
  const auto a = solve_hjb_1d(s, {401, 0, r, HjbScheme::crank_nicolson});
  const auto b = solve_hjb_1d(s, {801, 0, 2 * r, HjbScheme::crank_nicolson});
  EXPECT_NEAR(a.value_at(0, 1.0), b.value_at(0, 1.0), 1e-4);
}
