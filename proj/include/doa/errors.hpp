#pragma once

#include <stdexcept>
#include <string>

namespace doa {

/// Input violates an operation's precondition (bad shape, out-of-range angle, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An iterative kernel failed to converge or a matrix turned out singular.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An estimator could not produce the requested number of estimates.
class EstimatorFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Malformed, truncated or version-mismatched binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace doa
