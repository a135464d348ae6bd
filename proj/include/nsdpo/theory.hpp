#pragma once

// Computable objects of the offline analysis: sigmoid non-linearity
// coefficients, the variation budget, the discount-selection rule, the
// estimation/regret bound and its learning/tracking decomposition.

#include <cmath>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss.hpp>

#include "nsdpo/core.hpp"
#include "nsdpo/math.hpp"
#include "nsdpo/metrics.hpp"
#include "nsdpo/objectives.hpp"

namespace nsdpo {

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TheoryConfig {
  double W = 2.0;          // parameter radius
  double L = 1.0;          // feature norm bound
  double tau = 1.0;
  double lambda = 1e-3;
  double delta = 0.05;
  int d = 8;
  int T = 101;
  long n = 2000;
  double m_lower = 20.0;
  double m_upper = 20.0;
  double B_T = 1.0;
  double r_max = 1.0;
  double C1 = 1.0;
  double C2 = 0.5;
  double kappa = 1.0;

  void validate() const {
    if (!(delta > 0.0 && delta <= 0.5)) throw std::invalid_argument("delta must lie in (0, 1/2]");
    if (!(C2 > 0.0 && C2 < 1.0)) throw std::invalid_argument("C2 must lie in (0, 1)");
    if (!(W > 0.0 && L > 0.0 && tau > 0.0 && C1 > 0.0 && kappa > 0.0 && r_max > 0.0)) {
      throw std::invalid_argument("scale constants must be positive");
    }
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    if (!(B_T >= 0.0)) throw std::invalid_argument("B_T must be non-negative");
    if (d < 1 || T < 2 || n < 1) throw std::invalid_argument("need d >= 1, T >= 2, n >= 1");
    if (!(m_lower > 0.0 && m_upper >= m_lower)) throw std::invalid_argument("need 0 < m_lower <= m_upper");
  }
};

struct NonlinearityCoeffs {
  double k_sigma = 0.25;  // sup of the sigmoid slope
  double c_sigma = 0.25;  // inf of the sigmoid slope over the admissible margins
  double ratio = 1.0;     // R_sigma = k_sigma / c_sigma
};

/// |tau <dphi, theta>| <= 2 tau L W on the admissible set, and the sigmoid
/// slope is even and decreasing in |z|, so c_sigma = s'(2 tau L W).
inline NonlinearityCoeffs nonlinearity_coeffs(double tau, double L, double W) {
  if (tau < 0.0 || L < 0.0 || W < 0.0) throw std::invalid_argument("coefficients need non-negative inputs");
  NonlinearityCoeffs out;
  out.c_sigma = sigmoid_derivative(2.0 * tau * L * W);
  if (!(out.c_sigma > 0.0)) {
    throw NumericalError("c_sigma underflows to zero; 2 tau L W is too large");
  }
  out.ratio = out.k_sigma / out.c_sigma;
  return out;
}

/// B_T = sum_{t=1}^{T-1} ||theta*_{t+1} - theta*_t||_2.
inline double variation_budget(const DriftSchedule& schedule) {
  double total = 0.0;
  Vector previous = schedule.at(1);
  for (int t = 2; t <= schedule.horizon(); ++t) {
    Vector current = schedule.at(t);
    total += (current - previous).norm();
    previous = std::move(current);
  }
  return total;
}

/// gamma = 1 - sqrt(B_T / (d T)); requires 0 < B_T < d T.
inline double gamma_from_budget(double budget, int d, int horizon) {
  const double capacity = static_cast<double>(d) * static_cast<double>(horizon);
  if (!(budget > 0.0)) throw std::invalid_argument("variation budget must be positive");
  if (!(budget < capacity)) {
    throw std::invalid_argument("variation budget must be below d * T (gamma would be <= 0)");
  }
  return 1.0 - std::sqrt(budget / capacity);
}

/// Both sides of the discount condition 2 / (T (1 - gamma)) >= T^-1/2 d^1/2 B_T^-1/2.
struct GammaCondition {
  double lhs = 0.0;
  double rhs = 0.0;
};

inline GammaCondition gamma_condition(double budget, int d, int horizon) {
  const double gamma = gamma_from_budget(budget, d, horizon);
  const double T = static_cast<double>(horizon);
  return GammaCondition{2.0 / (T * (1.0 - gamma)),
                        std::sqrt(static_cast<double>(d)) / std::sqrt(T * budget)};
}

struct BoundBreakdown {
  double learning_term = 0.0;
  double tracking_term = 0.0;
  double regret_prefactor = 0.0;
  double regret_bound = 0.0;
};

/// Learning term 2 sqrt(lambda) W + (2 C1 / (tau c_sigma)) sqrt((d + log(1/delta)) / n),
/// tracking term (16 L R_sigma m_upper / (T (1-gamma)^{3/2})) sqrt(d m_upper / n) B_T,
/// regret prefactor r_max sqrt(m_upper T (1-gamma) kappa) / (C2 sqrt(2 m_lower (1 - gamma^{T-1}))).
inline BoundBreakdown estimation_bound_rhs(const TheoryConfig& cfg, double gamma) {
  cfg.validate();
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  const auto coeffs = nonlinearity_coeffs(cfg.tau, cfg.L, cfg.W);
  const double n = static_cast<double>(cfg.n);
  const double d = static_cast<double>(cfg.d);
  const double T = static_cast<double>(cfg.T);

  BoundBreakdown out;
  out.learning_term = 2.0 * std::sqrt(cfg.lambda) * cfg.W +
                      2.0 * cfg.C1 / (cfg.tau * coeffs.c_sigma) *
                          std::sqrt((d + std::log(1.0 / cfg.delta)) / n);
  out.tracking_term = 16.0 * cfg.L * coeffs.ratio * cfg.m_upper /
                      (T * std::pow(1.0 - gamma, 1.5)) * std::sqrt(d * cfg.m_upper / n) * cfg.B_T;
  out.regret_prefactor =
      cfg.r_max * std::sqrt(cfg.m_upper * T * (1.0 - gamma) * cfg.kappa) /
      (cfg.C2 * std::sqrt(2.0 * cfg.m_lower * (1.0 - std::pow(gamma, T - 1.0))));
  out.regret_bound = out.regret_prefactor * (out.learning_term + out.tracking_term);
  return out;
}

// ---------------------------------------------------------------------------
// G_T and the mean sigmoid slope along a segment
// ---------------------------------------------------------------------------

namespace detail {

template <class F>
double adaptive_gauss(const F& f, double lo, double hi, double whole, double tol, int depth) {
  using Rule = boost::math::quadrature::gauss<double, 33>;
  const double mid = 0.5 * (lo + hi);
  const double left = Rule::integrate(f, lo, mid);
  const double right = Rule::integrate(f, mid, hi);
  if (std::abs(left + right - whole) <= tol) return left + right;
  if (depth == 0) throw QuadratureError("mean-slope quadrature did not converge");
  return adaptive_gauss(f, lo, mid, left, 0.5 * tol, depth - 1) +
         adaptive_gauss(f, mid, hi, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// alpha = int_0^1 s'(z_a + v (z_b - z_a)) dv by composite 33-point
/// Gauss-Legendre, refined until panels agree to 1e-12.
inline double mean_sigmoid_slope(double z_a, double z_b) {
  if (z_a == z_b) return sigmoid_derivative(z_a);
  const auto f = [z_a, z_b](double v) { return sigmoid_derivative(z_a + v * (z_b - z_a)); };
  using Rule = boost::math::quadrature::gauss<double, 33>;
  const double whole = Rule::integrate(f, 0.0, 1.0);
  return detail::adaptive_gauss(f, 0.0, 1.0, whole, 1e-12, 40);
}

/// G_T = (1/n) sum_i gamma^(T-1-t_i) alpha_i dphi_i dphi_i^T + lambda c_sigma I,
/// alpha_i = mean slope of s along tau <dphi_i, (1-v) theta_a + v theta_b>.
inline Matrix build_gt(const Vector& theta_a, const Vector& theta_b, const PreferenceData& data,
                       double gamma, int horizon, double tau, double lambda, double c_sigma) {
  const Eigen::Index n = data.size();
  if (n == 0) throw std::invalid_argument("G_T of an empty dataset");
  const Vector za = tau * (data.diffs * theta_a);
  const Vector zb = tau * (data.diffs * theta_b);
  Vector scale(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    scale[i] = discount_weight(gamma, horizon, data.t[static_cast<std::size_t>(i)]) *
               mean_sigmoid_slope(za[i], zb[i]);
  }
  Matrix g = data.diffs.transpose() * scale.asDiagonal() * data.diffs / static_cast<double>(n);
  g = (0.5 * (g + g.transpose())).eval();
  g.diagonal().array() += lambda * c_sigma;
  return g;
}

struct GtCheck {
  bool passed = false;
  double min_eig = 0.0;     // lambda_min(G_T - c_sigma (Sigma_hat + lambda I))
  double gt_min_eig = 0.0;  // lambda_min(G_T)
};

/// Verifies G_T >= c_sigma (Sigma_hat + lambda I) up to -1e-8.
inline GtCheck gt_psd_check(const Vector& theta_a, const Vector& theta_b, const PreferenceData& data,
                            double gamma, int horizon, double tau, double lambda, double c_sigma) {
  const Matrix g = build_gt(theta_a, theta_b, data, gamma, horizon, tau, lambda, c_sigma);
  Matrix lower = sigma_hat(data, gamma, horizon).value;
  lower.diagonal().array() += lambda;
  lower *= c_sigma;
  GtCheck out;
  out.min_eig = min_eigenvalue(g - lower);
  out.gt_min_eig = min_eigenvalue(g);
  out.passed = out.min_eig >= -1e-8;
  return out;
}

// ---------------------------------------------------------------------------
// Learning / tracking decomposition at a known drift
// ---------------------------------------------------------------------------

enum class LabelMode {
  kObserved,  // residuals from the sampled binary labels
  kNoiseless  // labels replaced by the true probabilities (residuals vanish)
};

struct ErrorDecomposition {
  double xi_learn = 0.0;
  double xi_track = 0.0;
};

struct DecompositionConfig {
  double gamma = 1.0;
  double tau = 1.0;
  double lambda = 0.0;
  double c_sigma = 0.25;
  Vector theta_ref;  // empty = zero
  LabelMode labels = LabelMode::kObserved;
};

/// xi_learn = (2 / (tau^2 c_sigma)) ||(1/n) sum tau w_i eps_i dphi_i - lambda c_sigma tau^2 theta*_T||,
/// xi_track = (2 / (tau^2 c_sigma)) ||(1/n) sum tau w_i [s(tau<dphi_i, theta*_{t_i} - ref>)
///                                     - s(tau<dphi_i, theta*_T - ref>)] dphi_i||,
/// both in the (Sigma_hat + lambda I)^-1 norm, with w_i = gamma^(T-1-t_i) and
/// eps_i = o_i - s(tau <dphi_i, theta*_{t_i} - ref>).
inline ErrorDecomposition error_decomposition(const DriftSchedule& schedule,
                                              const PreferenceData& data,
                                              const DecompositionConfig& cfg) {
  const Eigen::Index n = data.size();
  if (n == 0) throw std::invalid_argument("error decomposition of an empty dataset");
  const int horizon = schedule.horizon();
  const Vector ref = cfg.theta_ref.size() == 0 ? Vector::Zero(data.dim()) : cfg.theta_ref;
  const Vector theta_T = schedule.at(horizon);
  const Vector delta_T = theta_T - ref;

  Vector learn_coeff(n);
  Vector track_coeff(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = data.t[static_cast<std::size_t>(i)];
    const double w = discount_weight(cfg.gamma, horizon, t);
    // Same expression for both margins, so a constant schedule gives exact zeros.
    const Vector delta_t = schedule.at(t) - ref;
    const double p_t = sigmoid(cfg.tau * data.diffs.row(i).dot(delta_t));
    const double p_T = sigmoid(cfg.tau * data.diffs.row(i).dot(delta_T));
    const double label = cfg.labels == LabelMode::kObserved ? data.labels[i] : p_t;
    learn_coeff[i] = cfg.tau * w * (label - p_t);
    track_coeff[i] = cfg.tau * w * (p_t - p_T);
  }
  const double dn = static_cast<double>(n);
  Vector learn = data.diffs.transpose() * learn_coeff / dn -
                 cfg.lambda * cfg.c_sigma * cfg.tau * cfg.tau * theta_T;
  Vector track = data.diffs.transpose() * track_coeff / dn;

  Matrix a = sigma_hat(data, cfg.gamma, horizon).value;
  a.diagonal().array() += cfg.lambda;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success || min_eigenvalue(a) <= 1e-14 * std::max(1.0, a.trace())) {
    throw NumericalError("Sigma_hat + lambda I is singular; use lambda > 0");
  }
  const double scale = 2.0 / (cfg.tau * cfg.tau * cfg.c_sigma);
  ErrorDecomposition out;
  out.xi_learn = scale * std::sqrt(std::max(0.0, learn.dot(llt.solve(learn))));
  out.xi_track = scale * std::sqrt(std::max(0.0, track.dot(llt.solve(track))));
  return out;
}

}  // namespace nsdpo
