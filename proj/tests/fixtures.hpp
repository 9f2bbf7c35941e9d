#pragma once

#include <vector>

#include "sysrisk/model.hpp"

namespace fixtures {

// One bank, no drift or noise, unit supply: x' = theta, cost (x_T)^2 + int theta^2.
inline sysrisk::Scenario scalar(double lo = -10.0, double hi = 10.0, std::size_t steps = 50) {
  sysrisk::Scenario s;
  s.banks = {{0.0, 1.0, 0.0}};
  s.init = {{1.0, 0.0}};
  s.sigma0 = 0.0;
  s.alpha = 1.0;
  s.beta = 0.0;
  s.lambda = 1.0;
  s.theta_lo = lo;
  s.theta_hi = hi;
  s.horizon = 1.0;
  s.steps = steps;
  s.mc_paths = 1;
  return s;
}

inline sysrisk::Scenario hetero4() {
  sysrisk::Scenario s;
  s.banks = {{1.0, 1.0, 0.3}, {0.5, 0.8, 0.2}, {1.5, 1.2, 0.4}, {0.8, 0.6, 0.25}};
  s.init = {{0.5, 0.0}, {-0.2, 0.1}, {1.0, 0.2}, {0.0, -0.1}};
  s.sigma0 = 0.2;
  s.alpha = 1.0;
  s.beta = 0.5;
  s.lambda = 0.5;
  s.theta_lo = -10.0;
  s.theta_hi = 10.0;
  s.horizon = 1.0;
  s.steps = 20;
  return s;
}

inline std::vector<double> x0_of(const sysrisk::Scenario& s) {
  std::vector<double> v;
  for (const auto& d : s.init) v.push_back(d.x0);
  return v;
}
inline std::vector<double> y_of(const sysrisk::Scenario& s) {
  std::vector<double> v;
  for (const auto& d : s.init) v.push_back(d.y);
  return v;
}

}  // namespace fixtures
