#pragma once

#include <stdexcept>
#include <string>

namespace qfmux {

// Configuration / input-document problems. CLI maps these to exit code 2.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Equilibrium or allocation infeasibility. CLI maps these to exit code 3.
class infeasible_error : public std::runtime_error {
 public:
  explicit infeasible_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure (eigensolver non-convergence, etc). CLI exit code 4.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Model fitting failure (degenerate samples, invalid fitted parameters).
class fit_error : public std::runtime_error {
 public:
  explicit fit_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qfmux
