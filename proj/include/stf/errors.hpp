#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stf {

/// Invalid or inconsistent run configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf or solver breakdown during a computation (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}

  std::size_t step() const { return step_; }

 private:
  std::size_t step_ = 0;
};

}  // namespace stf
