#pragma once

#include <stdexcept>
#include <string>

namespace csr {

/// Malformed or inconsistent caller input (bad schema, violated constraint).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A quantity left its mathematical domain, e.g. a positive numerator over a
/// zero denominator inside a positively weighted log term.
class NumericalDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An enumeration or state-space budget would be exceeded.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_value)
      : std::runtime_error(what), last_value_(last_value) {}
  double last_value() const noexcept { return last_value_; }

 private:
  double last_value_;
};

}  // namespace csr
