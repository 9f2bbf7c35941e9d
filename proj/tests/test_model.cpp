#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "sysrisk/model.hpp"

using namespace sysrisk;

TEST(DriftMatrix, SingleBankIsZero) {
  const std::vector<BankType> b{{3.0, 1.0, 1.0}};
  EXPECT_EQ(build_drift_matrix(b)(0, 0), 0.0);
}

TEST(DriftMatrix, TwoBanksByHand) {
  const std::vector<BankType> b{{1.0, 1.0, 1.0}, {2.0, 1.0, 1.0}};
  const auto a = build_drift_matrix(b);
  EXPECT_DOUBLE_EQ(a(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(a(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(a(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(a(1, 1), -1.0);
}

TEST(DriftMatrix, ThreeIdenticalBanks) {
  const std::vector<BankType> b(3, {1.0, 1.0, 1.0});
  const auto a = build_drift_matrix(b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(a(i, j), (i == j ? -2.0 : 1.0) / 3.0, 1e-15);
}

TEST(DriftMatrix, RowsSumToZero) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> ud(0.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BankType> b(1 + trial % 17);
    for (auto& x : b) x = {ud(gen), ud(gen), ud(gen)};
    const auto a = build_drift_matrix(b);
    for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).sum(), 0.0, 1e-14);
  }
}

TEST(DriftMatrix, EmptyListRejected) {
  EXPECT_THROW(build_drift_matrix({}), ConfigError);
}

TEST(VolMatrix, Structure) {
  const std::vector<BankType> one{{1.0, 1.0, 0.2}};
  const auto s1 = build_vol_matrix(one, 0.1);
  ASSERT_EQ(s1.rows(), 1);
  ASSERT_EQ(s1.cols(), 2);
  EXPECT_DOUBLE_EQ(s1(0, 0), 0.1);
  EXPECT_DOUBLE_EQ(s1(0, 1), 0.2);

  const std::vector<BankType> two{{1.0, 1.0, 0.3}, {1.0, 1.0, 0.4}};
  const auto s2 = build_vol_matrix(two, 0.0);
  EXPECT_EQ(s2.rows(), 2);
  EXPECT_EQ(s2.cols(), 3);
  EXPECT_EQ(s2.col(0).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(s2(0, 2), 0.0);
  EXPECT_EQ(s2(1, 2), 0.4);
  EXPECT_THROW(build_vol_matrix(two, -1.0), ConfigError);
}

TEST(Costs, HandValues) {
  const std::vector<double> x3{3.0}, y1{1.0};
  EXPECT_DOUBLE_EQ(terminal_cost(x3, y1, 2.0), 8.0);
  const std::vector<double> x{1.0, 2.0}, z{0.0, 0.0};
  EXPECT_DOUBLE_EQ(terminal_cost(x, z, 1.0), 2.5);
  EXPECT_EQ(terminal_cost(x, x, 4.0), 0.0);
  EXPECT_EQ(running_cost(x, x, 0.0, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(running_cost(x, x, 2.0, 1.0, 3.0), 12.0);
  const std::vector<double> two{2.0}, zero{0.0};
  EXPECT_DOUBLE_EQ(running_cost(two, zero, 1.0, 1.0, 1.0), 5.0);
  EXPECT_THROW(terminal_cost(x, y1, 1.0), DimensionError);
  EXPECT_THROW(running_cost(x, y1, 0.0, 1.0, 1.0), DimensionError);
}

TEST(Costs, PermutationInvariantAndControlSplit) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(6), y(6);
    for (auto& v : x) v = nd(gen);
    for (auto& v : y) v = nd(gen);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> xp(6), yp(6);
    for (std::size_t i = 0; i < 6; ++i) {
      xp[i] = x[perm[i]];
      yp[i] = y[perm[i]];
    }
    EXPECT_NEAR(terminal_cost(x, y, 1.3), terminal_cost(xp, yp, 1.3), 1e-14);
    const double th = nd(gen);
    EXPECT_NEAR(running_cost(x, y, th, 0.7, 2.0) - running_cost(x, y, 0.0, 0.7, 2.0),
                2.0 * th * th, 1e-13);
  }
}

TEST(Projection, ClampAndContract) {
  EXPECT_EQ(project_theta(0.3, -1, 1), 0.3);
  EXPECT_EQ(project_theta(2.5, -1, 1), 1.0);
  EXPECT_EQ(project_theta(-7, -1, 1), -1.0);
  EXPECT_THROW(project_theta(0.0, 1, -1), ConfigError);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> ud(-5, 5);
  for (int i = 0; i < 200; ++i) {
    const double v = ud(gen), w = ud(gen);
    const double pv = project_theta(v, -1, 2);
    EXPECT_EQ(project_theta(pv, -1, 2), pv);
    EXPECT_LE(std::abs(pv - project_theta(w, -1, 2)), std::abs(v - w));
  }
}

TEST(Scenario, ValidationCitesAssumption) {
  auto s = fixtures::scalar();
  EXPECT_NO_THROW(s.validate());
  s.theta_lo = 1.0;
  s.theta_hi = -1.0;
  try {
    s.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.assumption(), "A_Theta");
  }
  s = fixtures::scalar();
  s.banks[0].a = -1.0;
  try {
    s.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.assumption(), "A_s1");
  }
  s = fixtures::scalar();
  s.bound_k = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = fixtures::scalar();
  s.sigma0 = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = fixtures::scalar();
  s.lambda = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Scenario, PositiveTypeFlag) {
  EXPECT_FALSE(fixtures::scalar().strictly_positive_types());
  EXPECT_TRUE(fixtures::hetero4().strictly_positive_types());
}

TEST(LimitLaw, NestedDrawsAndMoments) {
  LimitLaw law{{Distribution::uniform(0.5, 1.5), Distribution::constant(1.0),
                Distribution::uniform(0.1, 0.3)},
               {Distribution::normal(0.0, 1.0), Distribution::constant(0.0)}};
  EXPECT_TRUE(law.continuous_density());
  EXPECT_EQ(law.sample_type(5, 3), law.sample_type(5, 3));
  EXPECT_NE(law.sample_type(5, 3), law.sample_type(6, 3));
  double m = 0, v = 0;
  const int n = 20000;
  for (int p = 0; p < n; ++p) {
    const double x = law.sample_initial(9, static_cast<std::size_t>(p), 0).x0;
    m += x;
    v += x * x;
  }
  m /= n;
  v = v / n - m * m;
  EXPECT_NEAR(m, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(v, 1.0, 0.05);
  const auto t = law.sample_type(1, 0);
  EXPECT_GE(t.a, 0.5);
  EXPECT_LE(t.a, 1.5);
  EXPECT_FALSE((LimitLaw{{}, {Distribution::constant(1.0), Distribution::constant(0.0)}})
                   .continuous_density());
}
