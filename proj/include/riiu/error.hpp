#pragma once

#include <stdexcept>
#include <string>

namespace riiu {

/// Operand dimensions do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Not enough samples to form a statistic (e.g. covariance from one vector).
class InsufficientData : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Iterative routine failed to converge or produced non-finite values.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix too close to singular for the requested quantity.
class IllConditioned : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No configuration satisfies the requested parameter budget.
class NoMatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace riiu
