#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace decent_opt {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidTopology : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UnsupportedRegime : public Error {
 public:
  using Error::Error;
};

// A reference solve that did not reach its tolerance.
class DiagnosticsError : public Error {
 public:
  DiagnosticsError(const std::string& what, double achieved_grad_norm)
      : Error(what), achieved_grad_norm_(achieved_grad_norm) {}
  double achieved_grad_norm() const noexcept { return achieved_grad_norm_; }

 private:
  double achieved_grad_norm_;
};

// Raised when an iterate becomes non-finite or exceeds the blow-up threshold.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t iteration, std::size_t agent)
      : Error("divergence at t=" + std::to_string(iteration) +
              " agent=" + std::to_string(agent)),
        iteration_(iteration),
        agent_(agent) {}
  std::size_t iteration() const noexcept { return iteration_; }
  std::size_t agent() const noexcept { return agent_; }

 private:
  std::size_t iteration_;
  std::size_t agent_;
};

}  // namespace decent_opt
