#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ssop {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr cd kI{0.0, 1.0};
inline constexpr double kPi = std::numbers::pi;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IntegrationFailure : public Error {
 public:
  IntegrationFailure(const std::string& what, double t) : Error(what), time_(t) {}
  double time() const { return time_; }

 private:
  double time_;
};

// Warnings default to stderr; tools may redirect them.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

// Uniform time grid of one solution window.
struct FrequencyGrid {
  int n_omega = 256;
  double dt = 0.8;

  double period() const { return n_omega * dt; }
  double time(int j) const { return j * dt; }
  // Signed integer frequency: indices at or above n_omega/2 wrap to negative.
  int signed_index(int k) const { return k >= n_omega / 2 ? k - n_omega : k; }
  double omega(int k) const { return 2.0 * kPi * signed_index(k) / period(); }
};

// ||v||_W^2 with diagonal weights.
inline double wnorm2(const CVec& v, const RVec& w) {
  return (v.cwiseAbs2().array() * w.array()).sum();
}

// Sum of weighted squared norms over all columns.
inline double wnorm2_cols(const CMat& m, const RVec& w) {
  return (m.cwiseAbs2().array().colwise() * w.array()).sum();
}

// X^* W Y for diagonal W.
inline CMat winner(const CMat& x, const RVec& w, const CMat& y) {
  return x.adjoint() * (w.asDiagonal() * y);
}

}  // namespace ssop
