#pragma once

#include <stdexcept>
#include <string>

namespace quantloss {

/// Raised when a parameter violates its documented range (tau outside (0,1),
/// non-positive scale, mismatched lengths, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numeric input is outside the domain of a function
/// (non-finite residual, probability outside (0,1), ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised by I/O and dataset ingestion.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace quantloss
