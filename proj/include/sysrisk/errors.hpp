#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sysrisk {

/// Base of every error the toolkit raises. `kind()` is a stable machine-readable tag
/// used by the command-line front end.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Invalid problem data. `assumption()` names the model hypothesis that was violated
/// (A_s1 for bank data and moments, A_Theta for the policy set) or is empty for plain
/// plumbing problems such as a missing key.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string assumption = {})
      : Error(assumption.empty() ? what : what + " [" + assumption + "]"),
        assumption_(std::move(assumption)) {}
  const char* kind() const noexcept override { return "config_error"; }
  const std::string& assumption() const noexcept { return assumption_; }

 private:
  std::string assumption_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension_error"; }
};

/// A control value left the policy interval.
class AdmissibilityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "admissibility_error"; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical_error"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

}  // namespace sysrisk
