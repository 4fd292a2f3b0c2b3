#pragma once

#include <stdexcept>
#include <string>

namespace seqmatch {

// Argument outside the mathematical domain of a function (df <= 0, q outside (0,1), ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Not enough observations to compute a requested quantity.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation not permitted in the current state of a trial (complete, incomplete, ...).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace seqmatch
