#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "nsdpo/core.hpp"
#include "nsdpo/dataset_io.hpp"
#include "support.hpp"

using namespace nsdpo;
using namespace nsdpo::testing;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (const double x : values) v[i++] = x;
  return v;
}

}  // namespace

TEST(FeatureMap, OriginWithFirstAction) {
  EXPECT_EQ(feature_map(Vector::Zero(4), 0), vec({1, 0, 1, 0, 1, 0, 1, 0}));
}

TEST(FeatureMap, HalfContextWithFirstAction) {
  const Vector phi = feature_map(Vector::Constant(4, 0.5), 0);
  EXPECT_LT((phi - vec({0, 1, 0, 1, 0, 1, 0, 1})).norm(), 1e-15);
}

TEST(FeatureMap, ScalesCosineBySecondAction) {
  const Vector phi = feature_map(vec({1, 0, 0, 0}), 1);
  EXPECT_LT((phi - vec({-2, 0, 2, 0, 2, 0, 2, 0})).norm(), 1e-15);
}

TEST(FeatureMap, NormBoundHoldsOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const int dx = uniform_int(rng, 1, 6);
    const int na = uniform_int(rng, 2, 20);
    const EnvironmentSpec env{dx, na, 1.0};
    const Vector x = sample_context(rng, dx);
    const auto a = static_cast<ActionIndex>(uniform_int(rng, 0, na - 1));
    const double norm = feature_map(x, a).norm();
    const double scale = static_cast<double>(a) + 1.0;
    EXPECT_LE(norm, std::sqrt(static_cast<double>(dx)) * std::max(scale, 1.0 / scale) + 1e-12);
    EXPECT_LE(norm, feature_norm_bound(env) + 1e-12);
  }
}

TEST(FeatureMap, NormBoundIsAttained) {
  const EnvironmentSpec env{4, 16, 1.0};
  EXPECT_NEAR(feature_map(Vector::Zero(4), 15).norm(), feature_norm_bound(env), 1e-12);
}

TEST(Context, RejectsCoordinatesOutsideUnitCube) {
  EXPECT_THROW(Context(vec({0.2, 1.5})), std::invalid_argument);
  EXPECT_THROW(Context(vec({-0.1})), std::invalid_argument);
  EXPECT_NO_THROW(Context(vec({0.0, 1.0})));
}

TEST(DriftSchedule, EarlyPhaseIsCosineAxis) {
  const auto s = default_drift_schedule(4, 101);
  EXPECT_EQ(optimal_param(s, 10), vec({1, 0, 1, 0, 1, 0, 1, 0}));
  EXPECT_EQ(s.at(33), cosine_axis(4));
}

TEST(DriftSchedule, EndOfRotationIsSineAxis) {
  const auto s = default_drift_schedule(4, 101);
  EXPECT_LT((s.at(66) - vec({0, 1, 0, 1, 0, 1, 0, 1})).norm(), 1e-15);
  EXPECT_EQ(s.at(67), sine_axis(4));
  EXPECT_EQ(s.at(101), sine_axis(4));
}

TEST(DriftSchedule, RotationFollowsQuarterCircle) {
  const auto s = default_drift_schedule(4, 101);
  for (int t = 34; t <= 66; ++t) {
    const double angle = (t - 33) / 33.0 * std::numbers::pi / 2.0;
    const Vector theta = s.at(t);
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(theta[2 * j], std::cos(angle), 1e-15);
      EXPECT_NEAR(theta[2 * j + 1], std::sin(angle), 1e-15);
    }
  }
}

TEST(DriftSchedule, HalfAngleGivesDiagonalPairs) {
  // Anchors 0 and 2 put t = 1 at u = 1/2.
  const DriftSchedule s({RotationSegment{1, 2, 0, 2, cosine_axis(2), sine_axis(2)}}, 2);
  const Vector theta = s.at(1);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(theta[k], std::sqrt(0.5), 1e-15);
}

TEST(DriftSchedule, StepsAreBoundedAcrossSegments) {
  const auto s = default_drift_schedule(4, 101);
  const double limit = 2.0 * std::numbers::pi / (2.0 * 33.0) + 1e-12;
  for (int t = 1; t < 101; ++t) EXPECT_LE((s.at(t + 1) - s.at(t)).norm(), limit) << "t = " << t;
}

TEST(DriftSchedule, RejectsOutOfRangeSteps) {
  const auto s = default_drift_schedule(4, 101);
  EXPECT_THROW(s.at(0), std::out_of_range);
  EXPECT_THROW(s.at(102), std::out_of_range);
}

TEST(DriftSchedule, RejectsGapsAndOverlaps) {
  EXPECT_THROW(DriftSchedule({ConstantSegment{1, 3, cosine_axis(1)}, ConstantSegment{5, 6, cosine_axis(1)}}, 6),
               std::invalid_argument);
  EXPECT_THROW(DriftSchedule({ConstantSegment{1, 4, cosine_axis(1)}, ConstantSegment{4, 6, cosine_axis(1)}}, 6),
               std::invalid_argument);
}

TEST(DriftSchedule, JsonRoundTrip) {
  const auto s = default_drift_schedule(3, 40);
  const auto back = DriftSchedule::from_json(s.to_json());
  for (int t = 1; t <= 40; ++t) EXPECT_EQ(back.at(t), s.at(t));
}

TEST(DriftSchedule, StationaryFlag) {
  EXPECT_TRUE(stationary_schedule(cosine_axis(2), 10).is_stationary());
  EXPECT_FALSE(default_drift_schedule(2, 10).is_stationary());
}

TEST(PreferenceProbability, EqualFeaturesGiveHalf) {
  EXPECT_EQ(preference_probability(Vector::Zero(8), cosine_axis(4), Vector::Zero(8), 1.0), 0.5);
}

TEST(PreferenceProbability, ZeroParameterGivesHalf) {
  Rng rng(3);
  const Vector x = sample_context(rng, 4);
  EXPECT_EQ(preference_probability(x, 2, 7, Vector::Zero(8), Vector::Zero(8), 1.0), 0.5);
}

TEST(PreferenceProbability, SwapIsExactComplement) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector x = sample_context(rng, 4);
    const auto [a, b] = sample_action_pair(rng, 16);
    const Vector theta = random_vector(rng, 8, 3.0);
    const double p = preference_probability(x, a, b, theta, Vector::Zero(8), 1.3);
    const double q = preference_probability(x, b, a, theta, Vector::Zero(8), 1.3);
    EXPECT_EQ(p + q, 1.0);
  }
}

TEST(PreferenceProbability, RejectsIdenticalActions) {
  EXPECT_THROW(preference_probability(Vector::Zero(4), 3, 3, cosine_axis(4), Vector::Zero(8), 1.0),
               std::invalid_argument);
}

TEST(SampleDataset, DefaultSizeAndPerStepCounts) {
  const auto s = default_drift_schedule(4, 101);
  const auto data = sample_dataset(s, 20, EnvironmentSpec{}, 1);
  EXPECT_EQ(data.size(), 2000u);
  const auto counts = data.per_step_counts();
  for (int t = 1; t <= 100; ++t) EXPECT_EQ(counts[static_cast<std::size_t>(t)], 20);
  EXPECT_NO_THROW(data.validate());
}

TEST(SampleDataset, SortedDistinctActions) {
  const auto data = sample_dataset(default_drift_schedule(4, 101), 7, EnvironmentSpec{}, 9);
  int previous = 0;
  for (const auto& p : data.points) {
    EXPECT_NE(p.winner, p.loser);
    EXPECT_GE(p.t, previous);
    previous = p.t;
  }
}

TEST(SampleDataset, SameSeedSameBytes) {
  const auto s = default_drift_schedule(4, 101);
  std::ostringstream a;
  std::ostringstream b;
  write_dataset(a, sample_dataset(s, 20, EnvironmentSpec{}, 42));
  write_dataset(b, sample_dataset(s, 20, EnvironmentSpec{}, 42));
  EXPECT_EQ(a.str(), b.str());
  std::ostringstream c;
  write_dataset(c, sample_dataset(s, 20, EnvironmentSpec{}, 43));
  EXPECT_NE(a.str(), c.str());
}

TEST(SampleDataset, TestSamplingDoesNotPerturbTraining) {
  const auto s = default_drift_schedule(4, 101);
  std::ostringstream a;
  write_dataset(a, sample_dataset(s, 5, EnvironmentSpec{}, 7));
  (void)sample_test_set(s, 100, EnvironmentSpec{}, 7);
  std::ostringstream b;
  write_dataset(b, sample_dataset(s, 5, EnvironmentSpec{}, 7));
  EXPECT_EQ(a.str(), b.str());
}

TEST(SampleDataset, LabelsAreCalibrated) {
  // Sum of (o - p) over the dataset, scaled by its standard deviation, stays within 3.
  const EnvironmentSpec env{2, 4, 1.0};
  const auto s = default_drift_schedule(2, 101);
  const auto data = sample_dataset(s, 200, env, 17);
  double residual = 0.0;
  double variance = 0.0;
  for (const auto& p : data.points) {
    const double prob = preference_probability(p.x, p.winner, p.loser, s.at(p.t), Vector::Zero(4), env.tau);
    residual += p.label - prob;
    variance += prob * (1.0 - prob);
  }
  EXPECT_LT(std::abs(residual) / std::sqrt(variance), 3.0);
}

TEST(SampleDataset, FixedComparisonFrequencyMatchesProbability) {
  // One comparison repeated: draw labels with the same rule as the sampler.
  const Vector x = Vector::Constant(4, 0.45);
  const double p = preference_probability(x, 0, 1, cosine_axis(4), Vector::Zero(8), 1.0);
  ASSERT_GT(p, 0.2);
  ASSERT_LT(p, 0.8);
  auto rng = substream(5, Stream::kTrainLabels);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int draws = 100000;
  int ones = 0;
  for (int i = 0; i < draws; ++i) ones += unit(rng) < p ? 1 : 0;
  const double se = std::sqrt(p * (1.0 - p) / draws);
  EXPECT_LT(std::abs(static_cast<double>(ones) / draws - p), 3.0 * se + 1e-12);
}

TEST(SampleDataset, RejectsBadShapes) {
  const auto s = default_drift_schedule(4, 101);
  EXPECT_THROW(sample_dataset(s, 0, EnvironmentSpec{}, 1), std::invalid_argument);
  EXPECT_THROW(sample_dataset(s, 1, EnvironmentSpec{3, 16, 1.0}, 1), std::invalid_argument);
}

TEST(SampleTestSet, HundredRowsAtHorizon) {
  const auto s = default_drift_schedule(4, 101);
  const auto rows = sample_test_set(s, 100, EnvironmentSpec{}, 1);
  ASSERT_EQ(rows.size(), 100u);
  for (const auto& r : rows) {
    EXPECT_NE(r.a1, r.a2);
    EXPECT_EQ(r.p, preference_probability(r.x, r.a1, r.a2, s.at(101), Vector::Zero(8), 1.0));
    EXPECT_GE(r.p, 0.0);
    EXPECT_LE(r.p, 1.0);
    const double logit = feature_difference(r.x, r.a1, r.a2).dot(s.at(101));
    if (std::abs(logit) < 30.0) {
      EXPECT_GT(r.p, 0.0);
      EXPECT_LT(r.p, 1.0);
    }
  }
}

TEST(PreferenceDatapoint, OrientedAndFlipped) {
  const PreferenceDatapoint p{Vector::Zero(2), 1, 4, 3, 0};
  const auto o = p.oriented();
  EXPECT_EQ(o.winner, 4u);
  EXPECT_EQ(o.loser, 1u);
  EXPECT_EQ(o.label, 1);
  const auto f = p.flipped();
  EXPECT_EQ(f.winner, 4u);
  EXPECT_EQ(f.label, 1);
  EXPECT_EQ(f.flipped().label, 0);
}

TEST(DatasetIo, JsonlRoundTrip) {
  const auto s = default_drift_schedule(4, 101);
  const auto data = sample_dataset(s, 3, EnvironmentSpec{}, 8);
  std::stringstream buf;
  write_dataset(buf, data);
  const auto back = read_dataset(buf);
  ASSERT_EQ(back.size(), data.size());
  EXPECT_EQ(back.horizon, 101);
  EXPECT_EQ(back.seed, 8u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back.points[i].x, data.points[i].x);
    EXPECT_EQ(back.points[i].winner, data.points[i].winner);
    EXPECT_EQ(back.points[i].loser, data.points[i].loser);
    EXPECT_EQ(back.points[i].t, data.points[i].t);
    EXPECT_EQ(back.points[i].label, data.points[i].label);
  }
  const auto schedule = DriftSchedule::from_json(back.schedule);
  EXPECT_EQ(schedule.at(50), s.at(50));
}

TEST(DatasetIo, TestSetRoundTrip) {
  const auto s = default_drift_schedule(4, 101);
  const auto rows = sample_test_set(s, 10, EnvironmentSpec{}, 2);
  std::stringstream buf;
  write_test_set(buf, rows, EnvironmentSpec{}, 101, s.to_json(), 2);
  const auto back = read_test_set(buf);
  ASSERT_EQ(back.rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].x, rows[i].x);
    EXPECT_EQ(back.rows[i].p, rows[i].p);
  }
}

TEST(DatasetIo, RejectsWrongKindAndMissingHeader) {
  std::stringstream empty;
  EXPECT_THROW(read_dataset(empty), std::runtime_error);
  std::stringstream test_kind;
  write_test_set(test_kind, {}, EnvironmentSpec{}, 101, nullptr, 0);
  EXPECT_THROW(read_dataset(test_kind), std::runtime_error);
}
