#pragma once

// Hand-rolled generators and independent oracles shared by the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "nsdpo/nsdpo.hpp"

namespace nsdpo::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline Vector random_vector(Rng& rng, Eigen::Index d, double scale = 1.0) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = uniform(rng, -scale, scale);
  return v;
}

/// Uniform direction with radius uniform in [0, radius].
inline Vector random_in_ball(Rng& rng, Eigen::Index d, double radius) {
  std::normal_distribution<double> normal;
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v.normalized() * radius * uniform(rng, 0.0, 1.0);
}

/// Random comparisons with random labels; time steps sorted in [1, T-1].
inline OfflineDataset random_dataset(Rng& rng, const EnvironmentSpec& env, int horizon, int n) {
  OfflineDataset data;
  data.env = env;
  data.horizon = horizon;
  std::vector<int> times(static_cast<std::size_t>(n));
  for (auto& t : times) t = uniform_int(rng, 1, horizon - 1);
  std::sort(times.begin(), times.end());
  for (int i = 0; i < n; ++i) {
    Vector x = sample_context(rng, env.context_dim);
    const auto [a, b] = sample_action_pair(rng, env.num_actions);
    data.points.push_back(PreferenceDatapoint{std::move(x), a, b, times[static_cast<std::size_t>(i)],
                                              uniform_int(rng, 0, 1)});
  }
  return data;
}

/// A small random environment, horizon and dataset in one draw.
struct RandomInstance {
  EnvironmentSpec env;
  int horizon = 0;
  OfflineDataset raw;
  PreferenceData data;
};

inline RandomInstance random_instance(Rng& rng, int min_n = 5, int max_n = 60) {
  RandomInstance out;
  out.env = EnvironmentSpec{uniform_int(rng, 1, 3), uniform_int(rng, 2, 6), uniform(rng, 0.2, 2.0)};
  out.horizon = uniform_int(rng, 3, 30);
  out.raw = random_dataset(rng, out.env, out.horizon, uniform_int(rng, min_n, max_n));
  out.data = prepare(out.raw);
  return out;
}

/// Central differences with step h.
inline Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                                         double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x;
    Vector down = x;
    up[i] += h;
    down[i] -= h;
    g[i] = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Damped Newton on a convex objective; used as an exact-minimizer oracle.
inline Vector newton_minimize(const Objective& objective, Vector theta, int max_iterations = 100) {
  for (int it = 0; it < max_iterations; ++it) {
    const Vector g = objective.gradient(theta);
    if (g.norm() < 1e-13) break;
    const Matrix h = objective.hessian(theta);
    const Vector step = h.ldlt().solve(g);
    double t = 1.0;
    const double f0 = objective.value(theta);
    while (t > 1e-12 && objective.value(theta - t * step) > f0 - 1e-4 * t * g.dot(step)) t *= 0.5;
    theta -= t * step;
  }
  return theta;
}

/// Preference table with random probabilities; prompt keys shared by groups of rows.
inline PreferenceTable random_table(Rng& rng, std::size_t rows, std::size_t rows_per_prompt = 4) {
  PreferenceTable table;
  for (std::size_t i = 0; i < rows; ++i) {
    table.rows.push_back(PreferenceRow{"item" + std::to_string(i), "prompt" + std::to_string(i / rows_per_prompt),
                                       "ra" + std::to_string(i), "rb" + std::to_string(i), uniform(rng, 0.0, 1.0),
                                       uniform(rng, 0.0, 1.0)});
  }
  return table;
}

}  // namespace nsdpo::testing
