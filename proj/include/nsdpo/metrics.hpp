#pragma once

// Evaluation quantities: discounted covariance matrices, coverage condition
// numbers, reward accuracy, expected regret and estimation-error norms.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsdpo/core.hpp"
#include "nsdpo/math.hpp"
#include "nsdpo/objectives.hpp"

namespace nsdpo {

enum class CovKind { kSigmaHat, kSigmaTilde, kSigmaPi, kSigmaDiff, kSigmaGammaDiff };

struct CovMatrix {
  Matrix value;
  CovKind kind = CovKind::kSigmaHat;

  double min_eigenvalue() const { return nsdpo::min_eigenvalue(value); }
  double max_eigenvalue() const { return nsdpo::max_eigenvalue(value); }
  bool is_symmetric(double tol = 1e-12) const { return (value - value.transpose()).cwiseAbs().maxCoeff() <= tol; }
};

/// Raised when the reference policy's feature covariance is (numerically) singular.
class CoverageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline CovMatrix weighted_difference_covariance(const PreferenceData& data, double gamma,
                                                int horizon, double exponent_scale, CovKind kind) {
  if (data.size() == 0) throw std::invalid_argument("covariance of an empty dataset");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  Vector w(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    w[i] = std::pow(gamma, exponent_scale * (horizon - data.t[static_cast<std::size_t>(i)] - 1));
  }
  Matrix m = data.diffs.transpose() * w.asDiagonal() * data.diffs / static_cast<double>(data.size());
  m = (0.5 * (m + m.transpose())).eval();
  return CovMatrix{std::move(m), kind};
}

}  // namespace detail

/// Sigma_hat = (1/n) sum_i gamma^(T - t_i - 1) dphi_i dphi_i^T.
inline CovMatrix sigma_hat(const PreferenceData& data, double gamma, int horizon) {
  return detail::weighted_difference_covariance(data, gamma, horizon, 1.0, CovKind::kSigmaHat);
}

/// Sigma_tilde: as sigma_hat with squared discount weights.
inline CovMatrix sigma_tilde(const PreferenceData& data, double gamma, int horizon) {
  return detail::weighted_difference_covariance(data, gamma, horizon, 2.0, CovKind::kSigmaTilde);
}

using FeatureFn = std::function<Vector(const Vector& x, ActionIndex a)>;

inline FeatureFn default_features() {
  return [](const Vector& x, ActionIndex a) { return feature_map(x, a); };
}

/// pi_theta(. | x) of a log-linear policy over all actions.
inline Vector policy_probabilities(const FeatureFn& features, const Vector& x, const Vector& theta,
                                   int num_actions) {
  Vector logits(num_actions);
  for (int a = 0; a < num_actions; ++a) logits[a] = features(x, static_cast<ActionIndex>(a)).dot(theta);
  const double top = logits.maxCoeff();
  Vector p = (logits.array() - top).exp();
  return p / p.sum();
}

struct PolicyCovariance {
  CovMatrix sigma;
  Vector mean_feature;
};

/// Sigma_pi = E[phi phi^T] - E[phi] E[phi]^T with x ~ U[0,1]^d_x (Monte Carlo)
/// and a ~ pi_theta(.|x) (summed exactly over the finite action set).
inline PolicyCovariance policy_covariance(const FeatureFn& features, const Vector& theta,
                                          const EnvironmentSpec& env, long n_mc, std::uint64_t seed) {
  env.validate();
  const int d = env.feature_dim();
  if (n_mc < 10L * d * d) {
    throw std::invalid_argument("Monte Carlo sample size must be at least 10 d^2 = " +
                                std::to_string(10L * d * d));
  }
  auto rng = substream(seed, Stream::kMonteCarlo);
  Matrix second = Matrix::Zero(d, d);
  Vector first = Vector::Zero(d);
  std::vector<Vector> phis(static_cast<std::size_t>(env.num_actions));
  for (long k = 0; k < n_mc; ++k) {
    const Vector x = sample_context(rng, env.context_dim);
    Vector logits(env.num_actions);
    for (int a = 0; a < env.num_actions; ++a) {
      phis[static_cast<std::size_t>(a)] = features(x, static_cast<ActionIndex>(a));
      logits[a] = phis[static_cast<std::size_t>(a)].dot(theta);
    }
    Vector p = (logits.array() - logits.maxCoeff()).exp();
    p /= p.sum();
    for (int a = 0; a < env.num_actions; ++a) {
      const Vector& phi = phis[static_cast<std::size_t>(a)];
      first += p[a] * phi;
      second.selfadjointView<Eigen::Lower>().rankUpdate(phi, p[a]);
    }
  }
  second = second.selfadjointView<Eigen::Lower>();
  first /= static_cast<double>(n_mc);
  second /= static_cast<double>(n_mc);
  Matrix cov = second - first * first.transpose();
  cov = (0.5 * (cov + cov.transpose())).eval();
  return PolicyCovariance{CovMatrix{std::move(cov), CovKind::kSigmaPi}, std::move(first)};
}

struct KappaEstimate {
  double kappa = 0.0;
  double lambda_max_pi = 0.0;
  double lambda_min_ref = 0.0;
};

/// kappa_pi = lambda_max(Sigma_pi) / lambda_min(Sigma_pi_ref). Both covariances
/// use the same context draws (same seed).
inline KappaEstimate condition_number_kappa(const FeatureFn& features, const Vector& theta_pi,
                                            const Vector& theta_ref, const EnvironmentSpec& env,
                                            long n_mc, std::uint64_t seed) {
  const auto pi = policy_covariance(features, theta_pi, env, n_mc, seed);
  const auto ref = policy_covariance(features, theta_ref, env, n_mc, seed);
  KappaEstimate out;
  out.lambda_max_pi = pi.sigma.max_eigenvalue();
  out.lambda_min_ref = ref.sigma.min_eigenvalue();
  const double scale = std::max(1.0, ref.sigma.max_eigenvalue());
  if (out.lambda_min_ref <= 1e-12 * scale) {
    throw CoverageError("reference policy covariance is singular (lambda_min = " +
                        std::to_string(out.lambda_min_ref) + "); feature coverage fails");
  }
  out.kappa = out.lambda_max_pi / out.lambda_min_ref;
  return out;
}

inline KappaEstimate condition_number_kappa(const Vector& theta_pi, const Vector& theta_ref,
                                            const EnvironmentSpec& env, long n_mc,
                                            std::uint64_t seed) {
  return condition_number_kappa(default_features(), theta_pi, theta_ref, env, n_mc, seed);
}

/// Population covariance of feature differences, Sigma_diff = E[dphi dphi^T]
/// with a, a' drawn independently from pi_ref. Equals 2 Sigma_pi_ref.
inline CovMatrix sigma_diff_population(const FeatureFn& features, const Vector& theta_ref,
                                       const EnvironmentSpec& env, long n_mc, std::uint64_t seed) {
  auto ref = policy_covariance(features, theta_ref, env, n_mc, seed);
  return CovMatrix{2.0 * ref.sigma.value, CovKind::kSigmaDiff};
}

/// Sigma_{gamma,diff} = E[gamma^(T-1-t) dphi dphi^T] with t uniform on [1, T-1].
/// Time is independent of (x, a, a'), so this is the mean discount times Sigma_diff.
inline CovMatrix sigma_gamma_diff_population(const CovMatrix& sigma_diff, double gamma, int horizon) {
  if (horizon < 2) throw std::invalid_argument("horizon must be >= 2");
  double mean_weight = 0.0;
  for (int t = 1; t <= horizon - 1; ++t) mean_weight += std::pow(gamma, horizon - 1 - t);
  mean_weight /= static_cast<double>(horizon - 1);
  return CovMatrix{mean_weight * sigma_diff.value, CovKind::kSigmaGammaDiff};
}

/// Upper bound on sup_v (v^T Sigma_diff v) / (v^T Sigma_{gamma,diff} v) under
/// temporal coverage: m_upper (T-1)(1-gamma) / (m_lower (1 - gamma^(T-1))).
/// gamma = 1 returns the limit m_upper / m_lower.
inline double omega_bar(int horizon, double gamma, double m_lower, double m_upper) {
  if (horizon < 2) throw std::invalid_argument("omega_bar needs T >= 2");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(m_lower > 0.0 && m_upper >= m_lower)) {
    throw std::invalid_argument("need 0 < m_lower <= m_upper");
  }
  if (gamma == 1.0) return m_upper / m_lower;
  const double steps = static_cast<double>(horizon - 1);
  // -expm1(steps * log(gamma)) = 1 - gamma^steps without cancellation near gamma = 1.
  const double geometric = -std::expm1(steps * std::log(gamma));
  return m_upper * steps * (1.0 - gamma) / (m_lower * geometric);
}

/// Share of test pairs whose implicit-reward sign matches the sign of
/// p_true - 1/2. A zero margin or p_true = 1/2 earns half credit.
inline double reward_accuracy(const Vector& theta, const Vector& theta_ref,
                              const std::vector<TestPair>& test_set, double tau) {
  if (test_set.empty()) throw std::invalid_argument("reward accuracy on an empty test set");
  const Vector delta = theta - theta_ref;
  double score = 0.0;
  for (const auto& row : test_set) {
    const double h = tau * feature_difference(row.x, row.a1, row.a2).dot(delta);
    const double truth = row.p - 0.5;
    if (h == 0.0 || truth == 0.0) {
      score += 0.5;
    } else if ((h > 0.0) == (truth > 0.0)) {
      score += 1.0;
    }
  }
  return score / static_cast<double>(test_set.size());
}

struct RegretEstimate {
  double value = 0.0;
  double std_error = 0.0;
  long n_contexts = 0;
};

/// Regret of one context: sum_a [pi*_T(a|x) - pi_theta(a|x)] r(x, a, T) with
/// r(x, a, T) = tau <phi(x,a), theta*_T - theta_ref>; pi*_T is the log-linear
/// policy with parameter theta*_T.
inline double context_regret(const FeatureFn& features, const Vector& x, const Vector& theta,
                             const Vector& theta_star, const Vector& theta_ref, double tau,
                             int num_actions) {
  const Vector p_star = policy_probabilities(features, x, theta_star, num_actions);
  const Vector p_theta = policy_probabilities(features, x, theta, num_actions);
  const Vector reward_dir = theta_star - theta_ref;
  double regret = 0.0;
  for (int a = 0; a < num_actions; ++a) {
    const double reward = tau * features(x, static_cast<ActionIndex>(a)).dot(reward_dir);
    regret += (p_star[a] - p_theta[a]) * reward;
  }
  return regret;
}

/// Paired Monte-Carlo estimate of the expected reward gap at the final step
/// of the schedule: exact over actions, sampled over contexts.
inline RegretEstimate expected_regret(const Vector& theta, const DriftSchedule& schedule,
                                      double tau, const Vector& theta_ref,
                                      const EnvironmentSpec& env, long n_contexts,
                                      std::uint64_t seed) {
  if (n_contexts < 2) throw std::invalid_argument("expected_regret needs at least 2 contexts");
  const auto features = default_features();
  const Vector theta_star = schedule.at(schedule.horizon());
  auto rng = substream(seed, Stream::kMonteCarlo);
  double mean = 0.0;
  double m2 = 0.0;
  for (long k = 0; k < n_contexts; ++k) {
    const Vector x = sample_context(rng, env.context_dim);
    const double r = context_regret(features, x, theta, theta_star, theta_ref, tau, env.num_actions);
    const double delta = r - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (r - mean);
  }
  const double variance = m2 / static_cast<double>(n_contexts - 1);
  return RegretEstimate{mean, std::sqrt(variance / static_cast<double>(n_contexts)), n_contexts};
}

/// ||theta_tilde - theta_star||_{Sigma_hat + lambda I}.
inline double estimation_error(const Vector& theta_tilde, const Vector& theta_star,
                               const PreferenceData& data, double gamma, int horizon,
                               double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("estimation_error needs lambda > 0");
  Matrix a = sigma_hat(data, gamma, horizon).value;
  a.diagonal().array() += lambda;
  return weighted_norm(theta_tilde - theta_star, a);
}

/// Flat metric record {run_id, metric, value, std_error}.
inline nlohmann::json metric_record(const std::string& run_id, const std::string& metric,
                                    double value, double std_error = 0.0) {
  return {{"run_id", run_id}, {"metric", metric}, {"value", value}, {"std_error", std_error}};
}

}  // namespace nsdpo
