#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tthf {

/// Dense model parameter vector; the unit of every protocol exchange.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (bad dimension, out-of-range parameter).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical certificate could not be established (e.g. strong convexity, lambda_c < 1).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tthf
