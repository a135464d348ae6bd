#pragma once

// Preference objectives over log-linear policies.
//
// For pi_theta(a|x) proportional to exp(phi(x,a)^T theta) the implicit reward
// difference is h_theta = tau * <phi(x,a) - phi(x,a'), theta - theta_ref>
// (the partition functions cancel). All three objectives share the labeled,
// regularized form
//
//   L(theta) = (1/N) sum_i w_i [-o_i log s(h_i) - (1 - o_i) log s(-h_i)]
//              + (lambda c_sigma tau^2 / 2) ||theta||^2
//
// and differ only in the per-point weights w_i and the normalizer N:
//   dpo    w_i = 1,                       N = n
//   nsdpo  w_i = gamma^(T - t_i - 1),     N = n
//   swdpo  w_i = [t_i >= T - window],     N = #{i : t_i >= T - window}

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsdpo/core.hpp"
#include "nsdpo/math.hpp"

namespace nsdpo {

enum class ObjectiveKind { kDpo, kNsDpo, kSwDpo };

inline std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kDpo: return "dpo";
    case ObjectiveKind::kNsDpo: return "nsdpo";
    case ObjectiveKind::kSwDpo: return "swdpo";
  }
  return "unknown";
}

inline ObjectiveKind parse_objective_kind(const std::string& name) {
  if (name == "dpo") return ObjectiveKind::kDpo;
  if (name == "nsdpo") return ObjectiveKind::kNsDpo;
  if (name == "swdpo") return ObjectiveKind::kSwDpo;
  throw std::invalid_argument("unknown objective '" + name + "' (expected dpo, nsdpo or swdpo)");
}

/// Raised when a sliding window contains no datapoints.
class EmptyWindowError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ObjectiveConfig {
  double tau = 1.0;
  double gamma = 1.0;
  double lambda = 0.0;
  std::optional<int> window;
  double c_sigma = 0.25;
  Vector theta_ref;  // empty means the zero vector (uniform reference policy)

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    if (!(c_sigma > 0.0)) throw std::invalid_argument("c_sigma must be positive");
    if (window && *window < 1) throw std::invalid_argument("window must be >= 1");
  }

  Vector reference(Eigen::Index dim) const {
    if (theta_ref.size() == 0) return Vector::Zero(dim);
    if (theta_ref.size() != dim) throw std::invalid_argument("theta_ref dimension mismatch");
    return theta_ref;
  }
};

struct LossReport {
  double value = 0.0;
  std::vector<double> per_point_weights;

  nlohmann::json to_json() const { return {{"value", value}, {"per_point_weights", per_point_weights}}; }
};

/// Feature differences phi(x_i, winner_i) - phi(x_i, loser_i), one per row,
/// with the matching time steps and labels. Built once per dataset.
struct PreferenceData {
  Matrix diffs;
  std::vector<int> t;
  Vector labels;
  int horizon = 0;

  Eigen::Index size() const { return diffs.rows(); }
  Eigen::Index dim() const { return diffs.cols(); }
};

inline PreferenceData prepare(const OfflineDataset& data) {
  if (data.empty()) throw std::invalid_argument("dataset is empty");
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  PreferenceData out;
  out.diffs.resize(n, data.env.feature_dim());
  out.t.resize(data.size());
  out.labels.resize(n);
  out.horizon = data.horizon;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = data.points[static_cast<std::size_t>(i)];
    out.diffs.row(i) = feature_difference(p.x, p.winner, p.loser).transpose();
    out.t[static_cast<std::size_t>(i)] = p.t;
    out.labels[i] = p.label;
  }
  return out;
}

/// h_theta(x, a, a') for a log-linear policy; antisymmetric in (a, a').
inline double implicit_reward_diff(const Vector& theta, const Vector& theta_ref,
                                   const PreferenceDatapoint& point, double tau) {
  return tau * feature_difference(point.x, point.winner, point.loser).dot(theta - theta_ref);
}

/// gamma^(T - t - 1).
inline double discount_weight(double gamma, int horizon, int t) {
  return std::pow(gamma, static_cast<double>(horizon - t - 1));
}

/// Per-point weights w_i and normalizer N for the given objective.
struct Weighting {
  Vector weights;
  double normalizer = 1.0;
};

inline Weighting objective_weights(ObjectiveKind kind, const PreferenceData& data,
                                   const ObjectiveConfig& config, int horizon) {
  const Eigen::Index n = data.size();
  if (n == 0) throw std::invalid_argument("dataset is empty");
  Weighting out{Vector::Ones(n), static_cast<double>(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (data.t[static_cast<std::size_t>(i)] >= horizon) {
      throw std::invalid_argument("datapoint time step must be < T");
    }
  }
  switch (kind) {
    case ObjectiveKind::kDpo:
      break;
    case ObjectiveKind::kNsDpo:
      for (Eigen::Index i = 0; i < n; ++i) {
        out.weights[i] = discount_weight(config.gamma, horizon, data.t[static_cast<std::size_t>(i)]);
      }
      break;
    case ObjectiveKind::kSwDpo: {
      if (!config.window) throw std::invalid_argument("swdpo needs a window size");
      const int cutoff = horizon - *config.window;
      Eigen::Index count = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool inside = data.t[static_cast<std::size_t>(i)] >= cutoff;
        out.weights[i] = inside ? 1.0 : 0.0;
        count += inside ? 1 : 0;
      }
      if (count == 0) {
        throw EmptyWindowError("sliding window of size " + std::to_string(*config.window) +
                               " contains no datapoints (needs t >= " + std::to_string(cutoff) + ")");
      }
      out.normalizer = static_cast<double>(count);
      break;
    }
  }
  return out;
}

/// Loss, gradient and Hessian of one objective bound to a dataset.
class Objective {
 public:
  Objective(ObjectiveKind kind, const PreferenceData& data, ObjectiveConfig config, int horizon)
      : kind_(kind), data_(&data), config_(std::move(config)), horizon_(horizon) {
    config_.validate();
    weighting_ = objective_weights(kind_, data, config_, horizon_);
    theta_ref_ = config_.reference(data.dim());
    reg_ = config_.lambda * config_.c_sigma * config_.tau * config_.tau;
  }

  ObjectiveKind kind() const { return kind_; }
  const ObjectiveConfig& config() const { return config_; }
  int horizon() const { return horizon_; }
  Eigen::Index dim() const { return data_->dim(); }
  const Vector& weights() const { return weighting_.weights; }

  /// h_i for every datapoint.
  Vector margins(const Vector& theta) const {
    return config_.tau * (data_->diffs * (theta - theta_ref_));
  }

  double value(const Vector& theta) const {
    const Vector h = margins(theta);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      const double w = weighting_.weights[i];
      if (w == 0.0) continue;
      const double o = data_->labels[i];
      sum += w * (-o * log_sigmoid(h[i]) - (1.0 - o) * log_sigmoid(-h[i]));
    }
    const double value = sum / weighting_.normalizer + 0.5 * reg_ * theta.squaredNorm();
    require_finite(value, "objective value");
    return value;
  }

  LossReport report(const Vector& theta) const {
    const auto& w = weighting_.weights;
    return LossReport{value(theta), std::vector<double>(w.data(), w.data() + w.size())};
  }

  Vector gradient(const Vector& theta) const {
    const Vector h = margins(theta);
    Vector coeff(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      coeff[i] = config_.tau * weighting_.weights[i] * (sigmoid(h[i]) - data_->labels[i]);
    }
    Vector g = data_->diffs.transpose() * coeff / weighting_.normalizer + reg_ * theta;
    require_finite(g, "objective gradient");
    return g;
  }

  /// (1/N) sum_i tau^2 w_i s'(h_i) dphi_i dphi_i^T + lambda c_sigma tau^2 I.
  Matrix hessian(const Vector& theta) const {
    const Vector h = margins(theta);
    Vector scale(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      scale[i] = config_.tau * config_.tau * weighting_.weights[i] * sigmoid_derivative(h[i]);
    }
    Matrix hess = data_->diffs.transpose() * scale.asDiagonal() * data_->diffs / weighting_.normalizer;
    hess.diagonal().array() += reg_;
    return hess;
  }

  /// Parameter-dependent part of the gradient:
  /// g_tau(theta) = (1/N) sum_i tau w_i s(h_i) dphi_i + lambda c_sigma tau^2 theta.
  Vector g_tau(const Vector& theta) const {
    const Vector h = margins(theta);
    Vector coeff(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      coeff[i] = config_.tau * weighting_.weights[i] * sigmoid(h[i]);
    }
    return data_->diffs.transpose() * coeff / weighting_.normalizer + reg_ * theta;
  }

 private:
  ObjectiveKind kind_;
  const PreferenceData* data_;
  ObjectiveConfig config_;
  int horizon_;
  Weighting weighting_;
  Vector theta_ref_;
  double reg_ = 0.0;
};

inline LossReport nsdpo_loss(const Vector& theta, const PreferenceData& data,
                             const ObjectiveConfig& config, int horizon) {
  return Objective(ObjectiveKind::kNsDpo, data, config, horizon).report(theta);
}

inline Vector nsdpo_grad(const Vector& theta, const PreferenceData& data,
                         const ObjectiveConfig& config, int horizon) {
  return Objective(ObjectiveKind::kNsDpo, data, config, horizon).gradient(theta);
}

inline LossReport dpo_loss(const Vector& theta, const PreferenceData& data,
                           const ObjectiveConfig& config) {
  return Objective(ObjectiveKind::kDpo, data, config, data.horizon).report(theta);
}

inline Vector dpo_grad(const Vector& theta, const PreferenceData& data, const ObjectiveConfig& config) {
  return Objective(ObjectiveKind::kDpo, data, config, data.horizon).gradient(theta);
}

inline LossReport swdpo_loss(const Vector& theta, const PreferenceData& data,
                             const ObjectiveConfig& config, int horizon) {
  return Objective(ObjectiveKind::kSwDpo, data, config, horizon).report(theta);
}

inline Vector swdpo_grad(const Vector& theta, const PreferenceData& data,
                         const ObjectiveConfig& config, int horizon) {
  return Objective(ObjectiveKind::kSwDpo, data, config, horizon).gradient(theta);
}

}  // namespace nsdpo
