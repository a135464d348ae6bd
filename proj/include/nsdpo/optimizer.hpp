#pragma once

// Deterministic full-batch gradient descent and the projection of an
// unconstrained estimate back onto the parameter ball.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsdpo/math.hpp"
#include "nsdpo/metrics.hpp"
#include "nsdpo/objectives.hpp"

namespace nsdpo {

struct TrainConfig {
  double learning_rate = 0.1;
  int steps = 1000;
  bool normalize_gradient = true;
  std::optional<Vector> init_theta;  // zeros when unset
  int eval_every = 10;
  std::uint64_t seed = 0;
  bool keep_snapshots = false;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  }
};

struct TraceRecord {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double reward_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::optional<Vector> theta;
};

struct TrainTrace {
  std::vector<TraceRecord> records;

  void write_csv(std::ostream& out) const {
    out << "step,loss,grad_norm,reward_accuracy\n";
    for (const auto& r : records) {
      out << r.step << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm) << ','
          << format_double(r.reward_accuracy) << '\n';
    }
  }

  /// {"step": [theta...]} for checkpoints that kept a snapshot.
  nlohmann::json snapshots_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : records) {
      if (!r.theta) continue;
      j.push_back({{"step", r.step},
                   {"theta", std::vector<double>(r.theta->data(), r.theta->data() + r.theta->size())}});
    }
    return j;
  }
};

struct TrainResult {
  Vector theta;
  TrainTrace trace;
};

/// Anything with value(theta), gradient(theta) and dim().
template <class P>
concept DifferentiableProblem = requires(const P& p, const Vector& theta) {
  { p.value(theta) } -> std::convertible_to<double>;
  { p.gradient(theta) } -> std::convertible_to<Vector>;
  { p.dim() } -> std::convertible_to<Eigen::Index>;
};

/// Returns the reward accuracy of a parameter; empty means "not evaluated".
using Evaluator = std::function<double(const Vector&)>;

/// theta <- theta - lr * g / ||g|| (or - lr * g). Checkpoints at step 0, every
/// eval_every steps and at the last step. A zero gradient leaves theta unchanged.
template <DifferentiableProblem Problem>
TrainResult train(const Problem& problem, const TrainConfig& config, const Evaluator& evaluate = {}) {
  config.validate();
  Vector theta = config.init_theta ? *config.init_theta : Vector::Zero(problem.dim());
  if (theta.size() != problem.dim()) throw std::invalid_argument("init_theta dimension mismatch");

  TrainResult result;
  auto checkpoint = [&](int step, const Vector& grad) {
    TraceRecord r;
    r.step = step;
    r.loss = problem.value(theta);
    r.grad_norm = grad.norm();
    if (evaluate) r.reward_accuracy = evaluate(theta);
    if (config.keep_snapshots) r.theta = theta;
    result.trace.records.push_back(std::move(r));
  };

  Vector grad = problem.gradient(theta);
  checkpoint(0, grad);
  for (int step = 1; step <= config.steps; ++step) {
    if (!grad.allFinite()) {
      throw NumericalError("non-finite gradient at step " + std::to_string(step));
    }
    const double norm = grad.norm();
    if (config.normalize_gradient) {
      if (norm > 0.0) theta -= config.learning_rate / norm * grad;
    } else {
      theta -= config.learning_rate * grad;
    }
    grad = problem.gradient(theta);
    if (step % config.eval_every == 0 || step == config.steps) {
      try {
        checkpoint(step, grad);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step));
      }
    }
  }
  result.theta = std::move(theta);
  return result;
}

/// Runs one objective over a prepared dataset, scoring reward accuracy on
/// test_set at each checkpoint when it is non-empty.
inline TrainResult train(ObjectiveKind kind, const PreferenceData& data,
                         const ObjectiveConfig& objective_config, const TrainConfig& train_config,
                         int horizon, const std::vector<TestPair>& test_set = {}) {
  if (data.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");
  const Objective objective(kind, data, objective_config, horizon);
  Evaluator evaluate;
  if (!test_set.empty()) {
    const Vector ref = objective_config.reference(data.dim());
    const double tau = objective_config.tau;
    evaluate = [&test_set, ref, tau](const Vector& theta) {
      return reward_accuracy(theta, ref, test_set, tau);
    };
  }
  return train(objective, train_config, evaluate);
}

// ---------------------------------------------------------------------------
// Parameter projection
// ---------------------------------------------------------------------------

struct ProjectionOptions {
  int max_iterations = 500;
  double tolerance = 1e-8;
};

struct ProjectionResult {
  Vector theta;
  double objective = 0.0;  // ||g_tau(theta_hat) - g_tau(theta)||_{(Sigma_hat + lambda I)^-1}
  int iterations = 0;
  bool converged = true;
};

inline Vector project_to_ball(const Vector& theta, double radius) {
  const double norm = theta.norm();
  if (norm <= radius) return theta;
  return theta * (radius / norm);
}

/// Evaluates ||g_tau(theta_hat) - g_tau(theta)||_{(Sigma_hat + lambda I)^-1}
/// for the discounted objective.
class ProjectionObjective {
 public:
  ProjectionObjective(const Vector& theta_hat, const PreferenceData& data,
                      const ObjectiveConfig& config, int horizon)
      : objective_(ObjectiveKind::kNsDpo, data, config, horizon),
        target_(objective_.g_tau(theta_hat)) {
    if (!(config.lambda > 0.0)) throw std::invalid_argument("projection needs lambda > 0");
    Matrix a = sigma_hat(data, config.gamma, horizon).value;
    a.diagonal().array() += config.lambda;
    metric_.compute(a);
    if (metric_.info() != Eigen::Success) throw NumericalError("Sigma_hat + lambda I is not PD");
  }

  double value(const Vector& theta) const {
    const Vector r = target_ - objective_.g_tau(theta);
    return std::sqrt(std::max(0.0, r.dot(metric_.solve(r))));
  }

  /// Gradient of the squared objective: -2 H(theta) A^-1 r.
  Vector squared_gradient(const Vector& theta) const {
    const Vector r = target_ - objective_.g_tau(theta);
    return -2.0 * objective_.hessian(theta) * metric_.solve(r);
  }

 private:
  Objective objective_;
  Vector target_;
  Eigen::LLT<Matrix> metric_;
};

/// theta_tilde = argmin_{||theta|| <= radius} ||g_tau(theta_hat) - g_tau(theta)||_{(Sigma_hat + lambda I)^-1}.
/// Projected gradient descent with backtracking, started from the radial shrink
/// of theta_hat. Returns theta_hat itself when it is already admissible.
inline ProjectionResult project_params(const Vector& theta_hat, const PreferenceData& data,
                                       const ObjectiveConfig& config, int horizon, double radius,
                                       const ProjectionOptions& options = {}) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  if (theta_hat.norm() <= radius) return ProjectionResult{theta_hat, 0.0, 0, true};

  const ProjectionObjective objective(theta_hat, data, config, horizon);
  Vector theta = project_to_ball(theta_hat, radius);
  double f = objective.value(theta);
  double f2 = f * f;
  double step = 1.0;
  ProjectionResult result{theta, f, 0, false};
  for (int it = 1; it <= options.max_iterations; ++it) {
    result.iterations = it;
    const Vector grad = objective.squared_gradient(theta);
    bool accepted = false;
    step *= 2.0;
    Vector candidate;
    double cand_f2 = f2;
    while (step > 1e-20) {
      candidate = project_to_ball(theta - step * grad, radius);
      const double c = objective.value(candidate);
      cand_f2 = c * c;
      if (cand_f2 <= f2 - 1e-4 / step * (candidate - theta).squaredNorm()) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.converged = true;  // no descent direction left on the ball
      break;
    }
    const double decrease = f2 - cand_f2;
    theta = candidate;
    f2 = cand_f2;
    if (decrease <= options.tolerance * std::max(f2, 1e-300) || f2 == 0.0) {
      result.converged = true;
      break;
    }
  }
  result.theta = theta;
  result.objective = std::sqrt(f2);
  return result;
}

}  // namespace nsdpo
