#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dampwave {

// Argument outside the mathematical domain of an operation (k = 0, tau <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Shape mismatch between operands: differing mode counts, non-divisible
// path lengths, grids too coarse for the requested analysis.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The implicit solve did not reach tolerance. Carries the last residual and,
// when raised from inside a trajectory, the step index.
class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, double residual, std::size_t iterations,
                long step = -1)
      : std::runtime_error(what), residual_(residual), iterations_(iterations), step_(step) {}

  double residual() const { return residual_; }
  std::size_t iterations() const { return iterations_; }
  long step() const { return step_; }

  SolverFailure at_step(long step) const {
    return SolverFailure(std::string(what()) + " (step " + std::to_string(step) + ")",
                         residual_, iterations_, step);
  }

 private:
  double residual_;
  std::size_t iterations_;
  long step_;
};

// Invalid configuration; key_path names the offending entry ("scheme.tau").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key_path, const std::string& message)
      : std::runtime_error(key_path + ": " + message), key_path_(std::move(key_path)) {}

  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dampwave
