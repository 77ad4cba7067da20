#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cpdreg {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-domain configuration value (beta_sq <= 0, omega >= 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (dimension mismatch, NaN, bad labels).
class InputError : public Error {
 public:
  using Error::Error;
};

// The M-step linear system could not be solved.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int iteration, double rcond)
      : Error(what + " (iteration " + std::to_string(iteration) +
              ", rcond estimate " + std::to_string(rcond) + ")"),
        iteration_(iteration),
        rcond_(rcond) {}

  int iteration() const noexcept { return iteration_; }
  double rcond() const noexcept { return rcond_; }

 private:
  int iteration_;
  double rcond_;
};

// All responsibilities vanished, so sigma^2 cannot be re-estimated.
class DegeneratePosteriorError : public Error {
 public:
  using Error::Error;
};

// A data cluster has no template members to be explained by.
class DegenerateClusterError : public InputError {
 public:
  DegenerateClusterError(const std::string& what, int cluster)
      : InputError(what + " (cluster " + std::to_string(cluster) + ")"),
        cluster_(cluster) {}

  int cluster() const noexcept { return cluster_; }

 private:
  int cluster_;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InputError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpdreg
