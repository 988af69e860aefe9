#pragma once

#include <stdexcept>
#include <string>

namespace iwd {

// Input outside an operation's mathematical domain (empty DDM, degenerate
// histogram, non-positive noise floor, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced or consumed by a numerical routine.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (unknown keys, out-of-range settings).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace iwd
