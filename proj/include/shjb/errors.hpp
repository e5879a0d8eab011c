#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shjb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Raised when a simulated state leaves the finite range; carries the first bad step.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : NumericError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class CflViolation : public NumericError {
 public:
  CflViolation(const std::string& what, double suggested_dt)
      : NumericError(what), suggested_dt_(suggested_dt) {}
  double suggested_dt() const noexcept { return suggested_dt_; }

 private:
  double suggested_dt_;
};

class NotConverged : public Error {
 public:
  using Error::Error;
};

// Throws InvalidArgument with `msg` unless `cond` holds.
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace shjb
