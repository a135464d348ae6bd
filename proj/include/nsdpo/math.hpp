#pragma once

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace nsdpo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when an intermediate loss/gradient value stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Logistic sigmoid. Negative arguments go through 1 - sigma(-z), which is
/// exact for sigma(-z) in [1/2, 1], so sigmoid(z) + sigmoid(-z) == 1 bitwise.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  return 1.0 - 1.0 / (1.0 + std::exp(z));
}

/// Derivative of the logistic sigmoid, sigma(z) * (1 - sigma(z)), written as
/// e^-|z| / (1 + e^-|z|)^2 so large margins do not round to zero.
inline double sigmoid_derivative(double z) {
  const double e = std::exp(-std::abs(z));
  const double denom = 1.0 + e;
  return e / (denom * denom);
}

/// log(1 + exp(u)) with the usual large-|u| branches.
inline double softplus(double u) {
  if (u > 30.0) return u;
  if (u < -30.0) return std::exp(u);
  return std::log1p(std::exp(u));
}

inline double log_sigmoid(double z) { return -softplus(-z); }

inline void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) {
    throw NumericalError(std::string("non-finite value in ") + what);
  }
}

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) {
    throw NumericalError(std::string("non-finite vector in ") + what);
  }
}

/// Shortest decimal text that reads back to the same double; empty for NaN.
inline std::string format_double(double value) {
  if (std::isnan(value)) return {};
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

/// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff();
}

/// ||v||_A = sqrt(v^T A v) for a PSD matrix A.
inline double weighted_norm(const Vector& v, const Matrix& a) {
  return std::sqrt(std::max(0.0, v.dot(a * v)));
}

}  // namespace nsdpo
