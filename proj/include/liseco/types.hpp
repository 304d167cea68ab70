#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace liseco {

/// Residual-stream state at one layer.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t got)
      : Error(what + ": expected dimension " + std::to_string(expected) + ", got " +
              std::to_string(got)) {}
  explicit DimensionError(const std::string& what) : Error(what) {}
};

/// Score bound on or outside the open image of the nonlinearity.
class RangeError : public Error {
 public:
  using Error::Error;
};

class ZeroDirectionError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  explicit TrainingError(const std::string& what) : Error(what) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_ = -1;
};

/// Malformed or inconsistent file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline void check_dim(const char* what, Eigen::Index expected, Eigen::Index got) {
  if (expected != got) {
    throw DimensionError(what, static_cast<std::size_t>(expected),
                         static_cast<std::size_t>(got));
  }
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace liseco
