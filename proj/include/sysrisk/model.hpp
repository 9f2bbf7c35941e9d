#pragma once

// Problem data for the N-bank reserve system: bank types, initial data, sampling laws,
// the drift/volatility structure and the cost functions.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sysrisk/errors.hpp"
#include "sysrisk/rng.hpp"

namespace sysrisk {

/// Per-bank type: borrow/lend rate a, monetary-supply intensity u, idiosyncratic
/// volatility sigma.
struct BankType {
  double a = 0.0;
  double u = 0.0;
  double sigma = 0.0;

  double norm() const { return std::sqrt(a * a + u * u + sigma * sigma); }
  bool operator==(const BankType&) const = default;
};

/// Initial log-reserve and target steady reserve level of one bank.
struct InitialDatum {
  double x0 = 0.0;
  double y = 0.0;
  bool operator==(const InitialDatum&) const = default;
};

/// A one-dimensional sampling law: a constant, Normal(mean, sd) or Uniform(lo, hi).
struct Distribution {
  enum class Kind { constant, normal, uniform };
  Kind kind = Kind::constant;
  double p1 = 0.0;
  double p2 = 0.0;

  static Distribution constant(double v) { return {Kind::constant, v, 0.0}; }
  static Distribution normal(double mean, double sd) { return {Kind::normal, mean, sd}; }
  static Distribution uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }

  bool atomic() const {
    return kind == Kind::constant || (kind == Kind::normal && p2 == 0.0) ||
           (kind == Kind::uniform && p1 == p2);
  }

  double mean() const {
    switch (kind) {
      case Kind::constant: return p1;
      case Kind::normal: return p1;
      case Kind::uniform: return 0.5 * (p1 + p2);
    }
    return p1;
  }

  double variance() const {
    switch (kind) {
      case Kind::constant: return 0.0;
      case Kind::normal: return p2 * p2;
      case Kind::uniform: return (p2 - p1) * (p2 - p1) / 12.0;
    }
    return 0.0;
  }

  double sample(const rng::Counter& c, std::uint32_t lane) const {
    switch (kind) {
      case Kind::constant: return p1;
      case Kind::normal: return p1 + p2 * rng::normal(c, lane);
      case Kind::uniform: return p1 + (p2 - p1) * rng::uniform(c, lane);
    }
    return p1;
  }

  void validate(const std::string& name) const {
    if (!std::isfinite(p1) || !std::isfinite(p2))
      throw ConfigError(name + ": non-finite law parameter");
    if (kind == Kind::normal && p2 < 0.0) throw ConfigError(name + ": negative standard deviation");
    if (kind == Kind::uniform && p2 < p1) throw ConfigError(name + ": uniform bounds reversed");
  }

  bool operator==(const Distribution&) const = default;
};

inline const char* to_string(Distribution::Kind k) {
  switch (k) {
    case Distribution::Kind::constant: return "constant";
    case Distribution::Kind::normal: return "normal";
    case Distribution::Kind::uniform: return "uniform";
  }
  return "constant";
}

struct TypeLaw {
  Distribution a, u, sigma;
  bool operator==(const TypeLaw&) const = default;
};

struct InitLaw {
  Distribution x0, y;
  bool operator==(const InitLaw&) const = default;
};

/// Joint law of (type, target, initial reserve) for i.i.d. banks.
///
/// Types are drawn once per bank index (a fixed heterogeneous population); initial data
/// are drawn per (path, bank), so the first N draws of a larger population are exactly
/// the N-bank population (nested coupling across N).
struct LimitLaw {
  TypeLaw types;
  InitLaw init;

  /// Whether the initial-reserve marginal has a density; uniqueness-dependent checks
  /// only apply to such laws.
  bool continuous_density() const { return !init.x0.atomic(); }

  BankType sample_type(std::uint64_t seed, std::size_t bank) const {
    const rng::Counter c{seed, rng::Stream::bank_type, 0, bank, 0};
    return {types.a.sample(c, 0), types.u.sample(c, 1), types.sigma.sample(c, 2)};
  }

  InitialDatum sample_initial(std::uint64_t seed, std::size_t path, std::size_t bank) const {
    const rng::Counter c{seed, rng::Stream::initial, path, bank, 0};
    return {init.x0.sample(c, 0), init.y.sample(c, 1)};
  }

  bool operator==(const LimitLaw&) const = default;
};

/// Closed policy interval [lo, hi].
struct PolicySet {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double project(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
  bool operator==(const PolicySet&) const = default;
};

/// Euclidean projection onto [lo, hi].
inline double project_theta(double theta_raw, double theta_lo, double theta_hi) {
  if (!(theta_lo <= theta_hi))
    throw ConfigError("policy interval is empty: theta_lo > theta_hi", "A_Theta");
  return PolicySet{theta_lo, theta_hi}.project(theta_raw);
}

/// A full problem instance.
struct Scenario {
  std::vector<BankType> banks;
  /// When set, `banks` were drawn from this law (kept so the file form round-trips).
  std::optional<TypeLaw> bank_law;

  /// Explicit initial data (same for every path) ...
  std::vector<InitialDatum> init;
  /// ... or a law sampled independently per (path, bank).
  std::optional<InitLaw> init_law;

  double sigma0 = 0.0;
  double alpha = 1.0;
  double beta = 0.0;
  double lambda = 1.0;
  double theta_lo = -1.0;
  double theta_hi = 1.0;
  double horizon = 1.0;
  std::size_t steps = 50;
  std::size_t mc_paths = 1000;
  std::uint64_t seed = 1;
  double rho_exp = 1.0;
  /// Global bound on |xi| = |(a, u, sigma)|.
  double bound_k = 10.0;

  std::size_t n_banks() const { return banks.size(); }
  PolicySet theta() const { return {theta_lo, theta_hi}; }
  bool random_initial() const { return init_law.has_value(); }

  /// Initial datum of one bank on one Monte Carlo path.
  InitialDatum initial(std::size_t path, std::size_t bank) const {
    if (init_law) return LimitLaw{{}, *init_law}.sample_initial(seed, path, bank);
    return init[bank];
  }

  /// True when every rate, supply intensity and volatility is strictly positive, as the
  /// model assumes. Zero entries are accepted by `validate` (degenerate test problems)
  /// but oracle comparisons outside this regime are flagged by callers.
  bool strictly_positive_types() const {
    for (const auto& b : banks)
      if (!(b.a > 0 && b.u > 0 && b.sigma > 0)) return false;
    return true;
  }

  void validate() const {
    if (banks.empty()) throw ConfigError("bank list is empty", "A_s1");
    if (!(bound_k > 0) || !std::isfinite(bound_k)) throw ConfigError("K must be positive", "A_s1");
    for (std::size_t i = 0; i < banks.size(); ++i) {
      const auto& b = banks[i];
      const std::string who = "bank " + std::to_string(i);
      if (!std::isfinite(b.a) || !std::isfinite(b.u) || !std::isfinite(b.sigma))
        throw ConfigError(who + ": non-finite type", "A_s1");
      if (b.a < 0) throw ConfigError(who + ": a must be nonnegative", "A_s1");
      if (b.u < 0) throw ConfigError(who + ": u must be nonnegative", "A_s1");
      if (b.sigma < 0) throw ConfigError(who + ": sigma must be nonnegative", "A_s1");
      if (b.norm() > bound_k) throw ConfigError(who + ": |(a,u,sigma)| exceeds K", "A_s1");
    }
    if (init_law) {
      init_law->x0.validate("init.x0");
      init_law->y.validate("init.y");
    } else {
      if (init.size() != banks.size())
        throw ConfigError("initial data count does not match bank count");
      for (const auto& d : init)
        if (!std::isfinite(d.x0) || !std::isfinite(d.y))
          throw ConfigError("initial data must be finite", "A_s1");
    }
    if (!(sigma0 >= 0) || !std::isfinite(sigma0)) throw ConfigError("sigma0 must be >= 0", "A_s1");
    if (!(alpha >= 0) || !(beta >= 0)) throw ConfigError("cost weights alpha, beta must be >= 0");
    if (!(lambda > 0)) throw ConfigError("cost weight lambda must be > 0");
    if (!std::isfinite(theta_lo) || !std::isfinite(theta_hi) || !(theta_lo <= theta_hi))
      throw ConfigError("policy interval [theta_lo, theta_hi] must be nonempty and bounded",
                        "A_Theta");
    if (!(horizon > 0) || !std::isfinite(horizon)) throw ConfigError("horizon T must be > 0");
    if (steps == 0) throw ConfigError("time steps must be >= 1");
    if (mc_paths == 0) throw ConfigError("Monte Carlo paths must be >= 1");
    if (!(rho_exp > 0)) throw ConfigError("moment exponent rho must be > 0", "A_s1");
  }

  bool operator==(const Scenario&) const = default;
};

/// Drift matrix with A[i][i] = (1-N) a_i / N and A[i][j] = a_i / N.
inline Eigen::MatrixXd build_drift_matrix(std::span<const BankType> banks) {
  if (banks.empty()) throw ConfigError("bank list is empty", "A_s1");
  const auto n = static_cast<Eigen::Index>(banks.size());
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double off = banks[i].a / static_cast<double>(n);
    a.row(i).setConstant(off);
    a(i, i) = -static_cast<double>(n - 1) * off;
  }
  return a;
}

/// N x (N+1) volatility matrix: common-noise column then the idiosyncratic diagonal.
inline Eigen::MatrixXd build_vol_matrix(std::span<const BankType> banks, double sigma0) {
  if (!(sigma0 >= 0)) throw ConfigError("sigma0 must be >= 0", "A_s1");
  const auto n = static_cast<Eigen::Index>(banks.size());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n + 1);
  s.col(0).setConstant(sigma0);
  for (Eigen::Index i = 0; i < n; ++i) s(i, i + 1) = banks[i].sigma;
  return s;
}

inline Eigen::VectorXd supply_vector(std::span<const BankType> banks) {
  Eigen::VectorXd u(static_cast<Eigen::Index>(banks.size()));
  for (std::size_t i = 0; i < banks.size(); ++i) u(static_cast<Eigen::Index>(i)) = banks[i].u;
  return u;
}

namespace detail {
inline double mean_square_gap(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty())
    throw DimensionError("state and target vectors must have equal nonzero length");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}
}  // namespace detail

/// (alpha / N) * sum |x_i - y_i|^2
inline double terminal_cost(std::span<const double> x, std::span<const double> y, double alpha) {
  return alpha * detail::mean_square_gap(x, y);
}

/// (beta / N) * sum |x_i - y_i|^2 + lambda * theta^2
inline double running_cost(std::span<const double> x, std::span<const double> y, double theta,
                           double beta, double lambda) {
  return beta * detail::mean_square_gap(x, y) + lambda * theta * theta;
}

}  // namespace sysrisk
