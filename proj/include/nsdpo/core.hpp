#pragma once

// Synthetic drifting-preference environment: feature map, drift schedules,
// Dynamic Bradley-Terry sampling and offline dataset generation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsdpo/math.hpp"

namespace nsdpo {

using ActionIndex = std::uint32_t;

/// Shape of the synthetic environment: contexts in [0,1]^context_dim,
/// actions in [0, num_actions), features of dimension 2 * context_dim.
struct EnvironmentSpec {
  int context_dim = 4;
  int num_actions = 16;
  double tau = 1.0;

  int feature_dim() const { return 2 * context_dim; }

  void validate() const {
    if (context_dim < 1) throw std::invalid_argument("context_dim must be >= 1");
    if (num_actions < 2) throw std::invalid_argument("num_actions must be >= 2");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  }
};

/// A prompt, represented as a point of the unit cube.
class Context {
 public:
  explicit Context(Vector x) : x_(std::move(x)) {
    if (x_.size() < 1) throw std::invalid_argument("context must have at least one coordinate");
    for (Eigen::Index i = 0; i < x_.size(); ++i) {
      if (!(x_[i] >= 0.0 && x_[i] <= 1.0)) {
        throw std::invalid_argument("context coordinate outside [0,1]");
      }
    }
  }

  const Vector& values() const { return x_; }
  int dim() const { return static_cast<int>(x_.size()); }

 private:
  Vector x_;
};

/// phi(x, a) = [(a+1) cos(pi x_0), sin(pi x_0)/(a+1), ...].
inline Vector feature_map(const Vector& x, ActionIndex action) {
  const double scale = static_cast<double>(action) + 1.0;
  Vector phi(2 * x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double angle = x[j] * std::numbers::pi;
    phi[2 * j] = scale * std::cos(angle);
    phi[2 * j + 1] = std::sin(angle) / scale;
  }
  return phi;
}

inline Vector feature_map(const Context& context, ActionIndex action) {
  return feature_map(context.values(), action);
}

inline Vector feature_difference(const Vector& x, ActionIndex a, ActionIndex b) {
  return feature_map(x, a) - feature_map(x, b);
}

/// Tight bound L on ||phi(x,a)||_2, attained at x = 0 and a = num_actions - 1.
inline double feature_norm_bound(const EnvironmentSpec& env) {
  return std::sqrt(static_cast<double>(env.context_dim)) * env.num_actions;
}

/// Parameter vector of a log-linear policy together with the admissible radius W.
struct PolicyParams {
  Vector theta;
  double radius = 1.0;

  bool admissible(double slack = 0.0) const { return theta.norm() <= radius + slack; }
};

// ---------------------------------------------------------------------------
// Drift schedules
// ---------------------------------------------------------------------------

/// theta*_t = theta for first <= t <= last.
struct ConstantSegment {
  int first = 1;
  int last = 1;
  Vector theta;
};

/// theta*_t = cos(u pi/2) theta_start + sin(u pi/2) theta_end with
/// u = (t - anchor_start) / (anchor_end - anchor_start), for first <= t <= last.
/// With theta_start = (1,0,1,0,...) and theta_end = (0,1,0,1,...) every
/// coordinate pair walks a quarter of the unit circle.
struct RotationSegment {
  int first = 1;
  int last = 1;
  int anchor_start = 0;
  int anchor_end = 1;
  Vector theta_start;
  Vector theta_end;
};

using ScheduleSegment = std::variant<ConstantSegment, RotationSegment>;

class DriftSchedule {
 public:
  DriftSchedule(std::vector<ScheduleSegment> segments, int horizon)
      : segments_(std::move(segments)), horizon_(horizon) {
    validate();
  }

  int horizon() const { return horizon_; }
  const std::vector<ScheduleSegment>& segments() const { return segments_; }

  int dim() const {
    return std::visit([](const auto& s) { return static_cast<int>(param_of(s).size()); },
                      segments_.front());
  }

  /// Optimal parameter theta*_t, 1 <= t <= horizon.
  Vector at(int t) const {
    if (t < 1 || t > horizon_) {
      throw std::out_of_range("time step " + std::to_string(t) + " outside [1, " +
                              std::to_string(horizon_) + "]");
    }
    for (const auto& segment : segments_) {
      if (const auto* c = std::get_if<ConstantSegment>(&segment)) {
        if (t >= c->first && t <= c->last) return c->theta;
      } else {
        const auto& r = std::get<RotationSegment>(segment);
        if (t >= r.first && t <= r.last) {
          const double u = static_cast<double>(t - r.anchor_start) /
                           static_cast<double>(r.anchor_end - r.anchor_start);
          const double angle = u * std::numbers::pi / 2.0;
          return std::cos(angle) * r.theta_start + std::sin(angle) * r.theta_end;
        }
      }
    }
    throw std::logic_error("schedule does not cover time step");  // unreachable after validate()
  }

  double max_norm() const {
    double best = 0.0;
    for (int t = 1; t <= horizon_; ++t) best = std::max(best, at(t).norm());
    return best;
  }

  bool is_stationary() const {
    const Vector first = at(1);
    for (int t = 2; t <= horizon_; ++t) {
      if ((at(t) - first).norm() != 0.0) return false;
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& segment : segments_) {
      if (const auto* c = std::get_if<ConstantSegment>(&segment)) {
        segs.push_back({{"kind", "constant"},
                        {"first", c->first},
                        {"last", c->last},
                        {"theta", to_std(c->theta)}});
      } else {
        const auto& r = std::get<RotationSegment>(segment);
        segs.push_back({{"kind", "rotation"},
                        {"first", r.first},
                        {"last", r.last},
                        {"anchor_start", r.anchor_start},
                        {"anchor_end", r.anchor_end},
                        {"theta_start", to_std(r.theta_start)},
                        {"theta_end", to_std(r.theta_end)}});
      }
    }
    return {{"horizon", horizon_}, {"segments", segs}};
  }

  static DriftSchedule from_json(const nlohmann::json& j) {
    std::vector<ScheduleSegment> segs;
    for (const auto& s : j.at("segments")) {
      const std::string kind = s.at("kind");
      if (kind == "constant") {
        segs.push_back(ConstantSegment{s.at("first"), s.at("last"), from_std(s.at("theta"))});
      } else if (kind == "rotation") {
        segs.push_back(RotationSegment{s.at("first"), s.at("last"), s.at("anchor_start"),
                                       s.at("anchor_end"), from_std(s.at("theta_start")),
                                       from_std(s.at("theta_end"))});
      } else {
        throw std::invalid_argument("unknown schedule segment kind: " + kind);
      }
    }
    return DriftSchedule(std::move(segs), j.at("horizon"));
  }

 private:
  static const Vector& param_of(const ConstantSegment& s) { return s.theta; }
  static const Vector& param_of(const RotationSegment& s) { return s.theta_start; }

  static std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }
  static Vector from_std(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  void validate() const {
    if (horizon_ < 2) throw std::invalid_argument("schedule horizon must be >= 2");
    if (segments_.empty()) throw std::invalid_argument("schedule needs at least one segment");
    int expected_first = 1;
    Eigen::Index d = -1;
    for (const auto& segment : segments_) {
      auto [first, last] = std::visit([](const auto& s) { return std::pair{s.first, s.last}; },
                                      segment);
      if (first != expected_first) {
        throw std::invalid_argument("schedule segments leave a gap or overlap at t = " +
                                    std::to_string(expected_first));
      }
      if (last < first) throw std::invalid_argument("schedule segment ends before it starts");
      if (const auto* r = std::get_if<RotationSegment>(&segment)) {
        if (r->anchor_end == r->anchor_start) {
          throw std::invalid_argument("rotation segment anchors must differ");
        }
        if (r->theta_start.size() != r->theta_end.size()) {
          throw std::invalid_argument("rotation segment endpoints differ in dimension");
        }
      }
      const Eigen::Index sd =
          std::visit([](const auto& s) { return param_of(s).size(); }, segment);
      if (d >= 0 && sd != d) throw std::invalid_argument("schedule segments differ in dimension");
      d = sd;
      expected_first = last + 1;
    }
    if (expected_first != horizon_ + 1) {
      throw std::invalid_argument("schedule segments do not cover [1, horizon]");
    }
  }

  std::vector<ScheduleSegment> segments_;
  int horizon_;
};

/// (1,0,1,0,...) of length 2 * context_dim.
inline Vector cosine_axis(int context_dim) {
  Vector v = Vector::Zero(2 * context_dim);
  for (int j = 0; j < context_dim; ++j) v[2 * j] = 1.0;
  return v;
}

/// (0,1,0,1,...) of length 2 * context_dim.
inline Vector sine_axis(int context_dim) {
  Vector v = Vector::Zero(2 * context_dim);
  for (int j = 0; j < context_dim; ++j) v[2 * j + 1] = 1.0;
  return v;
}

/// Three-phase drift: cosine axis up to b1 = (T-1)/3, quarter-circle rotation
/// on (b1, b2] with b2 = 2(T-1)/3, sine axis afterwards. T = 101 gives the
/// 33/66 breakpoints of the reference experiment.
inline DriftSchedule default_drift_schedule(int context_dim, int horizon) {
  const int b1 = (horizon - 1) / 3;
  const int b2 = 2 * (horizon - 1) / 3;
  if (b1 < 1 || b2 <= b1 || b2 >= horizon) {
    throw std::invalid_argument("horizon too short for the three-phase drift schedule");
  }
  const Vector start = cosine_axis(context_dim);
  const Vector end = sine_axis(context_dim);
  std::vector<ScheduleSegment> segs{
      ConstantSegment{1, b1, start},
      RotationSegment{b1 + 1, b2, b1, b2, start, end},
      ConstantSegment{b2 + 1, horizon, end},
  };
  return DriftSchedule(std::move(segs), horizon);
}

inline DriftSchedule stationary_schedule(const Vector& theta, int horizon) {
  return DriftSchedule({ConstantSegment{1, horizon, theta}}, horizon);
}

/// theta*_t for the given schedule.
inline Vector optimal_param(const DriftSchedule& schedule, int t) { return schedule.at(t); }

/// Dynamic Bradley-Terry probability that a1 is preferred to a2:
/// sigma(tau * <phi(x,a1) - phi(x,a2), theta* - theta_ref>).
inline double preference_probability(const Vector& phi_diff, const Vector& theta_star,
                                     const Vector& theta_ref, double tau) {
  return sigmoid(tau * phi_diff.dot(theta_star - theta_ref));
}

inline double preference_probability(const Vector& x, ActionIndex a1, ActionIndex a2,
                                     const Vector& theta_star, const Vector& theta_ref,
                                     double tau) {
  if (a1 == a2) throw std::invalid_argument("preference_probability needs distinct actions");
  return preference_probability(feature_difference(x, a1, a2), theta_star, theta_ref, tau);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// One offline comparison. The pair is kept in sampled order; label = 1 means
/// `winner` was observed to be preferred over `loser`, label = 0 the reverse.
struct PreferenceDatapoint {
  Vector x;
  ActionIndex winner = 0;
  ActionIndex loser = 1;
  int t = 1;
  int label = 1;

  /// Same comparison written with the preferred action first and label 1.
  PreferenceDatapoint oriented() const {
    if (label == 1) return *this;
    return PreferenceDatapoint{x, loser, winner, t, 1};
  }

  /// Same comparison with the pair order and the label both flipped.
  PreferenceDatapoint flipped() const { return PreferenceDatapoint{x, loser, winner, t, 1 - label}; }
};

struct OfflineDataset {
  EnvironmentSpec env;
  int horizon = 101;
  std::uint64_t seed = 0;
  nlohmann::json schedule;  // descriptor of the generating schedule, may be null
  std::vector<PreferenceDatapoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// counts[t] for t in [0, horizon); index 0 is unused.
  std::vector<int> per_step_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(horizon), 0);
    for (const auto& p : points) ++counts.at(static_cast<std::size_t>(p.t));
    return counts;
  }

  /// Checks the structural invariants: distinct pairs, 1 <= t <= T-1, sorted by t.
  void validate() const {
    env.validate();
    int previous_t = 0;
    for (const auto& p : points) {
      if (p.winner == p.loser) throw std::invalid_argument("datapoint with identical actions");
      if (p.winner >= static_cast<ActionIndex>(env.num_actions) ||
          p.loser >= static_cast<ActionIndex>(env.num_actions)) {
        throw std::invalid_argument("datapoint action out of range");
      }
      if (p.t < 1 || p.t > horizon - 1) throw std::invalid_argument("datapoint time step outside [1, T-1]");
      if (p.t < previous_t) throw std::invalid_argument("datapoints not sorted by time step");
      if (p.label != 0 && p.label != 1) throw std::invalid_argument("label must be 0 or 1");
      if (p.x.size() != env.context_dim) throw std::invalid_argument("context dimension mismatch");
      previous_t = p.t;
    }
  }
};

/// Held-out comparison carrying the exact preference probability at step T.
struct TestPair {
  Vector x;
  ActionIndex a1 = 0;
  ActionIndex a2 = 1;
  double p = 0.5;
};

/// Independent random streams derived from one seed.
enum class Stream : std::uint32_t {
  kTrainContexts = 1,
  kTrainActions = 2,
  kTrainLabels = 3,
  kTestContexts = 4,
  kTestActions = 5,
  kMonteCarlo = 6,
  kTableSplit = 7,
  kTableTimes = 8,
  kTableLabels = 9,
  kTableSubsample = 10,
};

inline std::mt19937_64 substream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline Vector sample_context(std::mt19937_64& rng, int context_dim) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(context_dim);
  for (int j = 0; j < context_dim; ++j) x[j] = unit(rng);
  return x;
}

/// Uniform ordered pair of distinct actions.
inline std::pair<ActionIndex, ActionIndex> sample_action_pair(std::mt19937_64& rng, int num_actions) {
  std::uniform_int_distribution<ActionIndex> first(0, static_cast<ActionIndex>(num_actions - 1));
  std::uniform_int_distribution<ActionIndex> offset(1, static_cast<ActionIndex>(num_actions - 1));
  const ActionIndex a1 = first(rng);
  const ActionIndex a2 = (a1 + offset(rng)) % static_cast<ActionIndex>(num_actions);
  return {a1, a2};
}

/// Draws points_per_step comparisons for every t in [1, T-1] with labels from
/// the Dynamic Bradley-Terry model under theta*_t and a uniform reference.
inline OfflineDataset sample_dataset(const DriftSchedule& schedule, int points_per_step,
                                     const EnvironmentSpec& env, std::uint64_t seed) {
  env.validate();
  if (points_per_step < 1) throw std::invalid_argument("points_per_step must be >= 1");
  if (schedule.dim() != env.feature_dim()) {
    throw std::invalid_argument("schedule dimension does not match feature dimension");
  }
  auto ctx_rng = substream(seed, Stream::kTrainContexts);
  auto act_rng = substream(seed, Stream::kTrainActions);
  auto lab_rng = substream(seed, Stream::kTrainLabels);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vector theta_ref = Vector::Zero(env.feature_dim());

  OfflineDataset data;
  data.env = env;
  data.horizon = schedule.horizon();
  data.seed = seed;
  data.schedule = schedule.to_json();
  data.points.reserve(static_cast<std::size_t>(points_per_step) *
                      static_cast<std::size_t>(schedule.horizon() - 1));
  for (int t = 1; t <= schedule.horizon() - 1; ++t) {
    const Vector theta_star = schedule.at(t);
    for (int k = 0; k < points_per_step; ++k) {
      Vector x = sample_context(ctx_rng, env.context_dim);
      const auto [a1, a2] = sample_action_pair(act_rng, env.num_actions);
      const double p = preference_probability(x, a1, a2, theta_star, theta_ref, env.tau);
      const int label = unit(lab_rng) < p ? 1 : 0;
      data.points.push_back(PreferenceDatapoint{std::move(x), a1, a2, t, label});
    }
  }
  return data;
}

/// Held-out pairs at the evaluation step T = schedule.horizon().
inline std::vector<TestPair> sample_test_set(const DriftSchedule& schedule, int n_test,
                                             const EnvironmentSpec& env, std::uint64_t seed) {
  env.validate();
  if (n_test < 1) throw std::invalid_argument("n_test must be >= 1");
  auto ctx_rng = substream(seed, Stream::kTestContexts);
  auto act_rng = substream(seed, Stream::kTestActions);
  const Vector theta_star = schedule.at(schedule.horizon());
  const Vector theta_ref = Vector::Zero(env.feature_dim());
  std::vector<TestPair> rows;
  rows.reserve(static_cast<std::size_t>(n_test));
  for (int i = 0; i < n_test; ++i) {
    Vector x = sample_context(ctx_rng, env.context_dim);
    const auto [a1, a2] = sample_action_pair(act_rng, env.num_actions);
    const double p = preference_probability(x, a1, a2, theta_star, theta_ref, env.tau);
    rows.push_back(TestPair{std::move(x), a1, a2, p});
  }
  return rows;
}

}  // namespace nsdpo
