#pragma once

#include <stdexcept>
#include <string>

namespace cfmm {

// Invalid or infeasible configuration. The CLI maps this to exit code 2.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O failure, reported with the offending path. The CLI maps this to
// exit code 3.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure at runtime (non-convergence, singular system).
// The CLI maps this to exit code 3.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& msg, double residual = 0.0)
      : std::runtime_error(msg), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace cfmm
