#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rateshift {

/// Structurally invalid model input (bad shapes, negative rates, unknown fields).
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the domain of an operation (time outside the horizon, bad init vector).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A path jumps along an edge the reference measure gives zero rate.
class AbsoluteContinuityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// API misuse that is neither a model nor a domain problem.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A declared bound (rejection constant, thinning majorant) was exceeded at runtime.
class BoundViolationError : public std::runtime_error {
 public:
  BoundViolationError(const std::string& what, double observed, double bound)
      : std::runtime_error(what), observed_(observed), bound_(bound) {}
  double observed() const noexcept { return observed_; }
  double bound() const noexcept { return bound_; }

 private:
  double observed_;
  double bound_;
};

/// Rejection sampling gave up; carries the running acceptance estimate.
class BudgetError : public std::runtime_error {
 public:
  BudgetError(const std::string& what, std::uint64_t attempts, std::uint64_t accepted)
      : std::runtime_error(what), attempts_(attempts), accepted_(accepted) {}
  std::uint64_t attempts() const noexcept { return attempts_; }
  double acceptance_estimate() const noexcept {
    return attempts_ == 0 ? 0.0 : static_cast<double>(accepted_) / static_cast<double>(attempts_);
  }

 private:
  std::uint64_t attempts_;
  std::uint64_t accepted_;
};

/// Filter or particle ensemble collapsed (all mass zero, empty ensemble).
class DegenerateFilterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rateshift
