#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "latnav/plan.hpp"
#include "../support/gradcheck.hpp"
#include "../support/stub_models.hpp"

using namespace latnav;
using namespace latnav::testing;

namespace {

constexpr double kLn2 = std::numbers::ln2;

LatentPoint point(std::initializer_list<double> v) { return LatentPoint{std::vector<double>(v)}; }

struct Stubs {
  Generator g;
  Classifier id;
  Classifier cls;
  PlanModels models() const { return {g, id, cls}; }
};

Stubs random_stubs(std::uint64_t seed, std::size_t d = 4) {
  Rng rng(seed);
  Stubs s;
  s.g = tiny_generator(d, 2, rng);
  s.id = tiny_classifier(s.g.pixel_count(), 5, rng);
  s.cls = tiny_classifier(s.g.pixel_count(), 2, rng);
  return s;
}

Trajectory perturbed_line(std::size_t d, std::size_t length, Rng& rng, int label = 0, double noise = 0.3) {
  Trajectory t = init_linear(random_point(d, rng), random_point(d, rng), length, label);
  for (std::size_t i = 1; i + 1 < length; ++i) {
    for (double& v : t.points[i].values) v += noise * standard_normal(rng);
  }
  return t;
}

Tensor interior_of(const Trajectory& t) {
  Tensor out = Tensor::matrix(t.length() - 2, t.dim());
  for (std::size_t i = 1; i + 1 < t.length(); ++i) {
    std::copy(t.points[i].values.begin(), t.points[i].values.end(), out.row(i - 1).begin());
  }
  return out;
}

Trajectory with_interior(Trajectory t, const Tensor& interior) {
  for (std::size_t i = 1; i + 1 < t.length(); ++i) {
    t.points[i].values.assign(interior.row(i - 1).begin(), interior.row(i - 1).end());
  }
  return t;
}

}  // namespace

TEST(InitLinear, MidpointOfUnitSegment) {
  const Trajectory t = init_linear(point({0, 0}), point({1, 1}), 3);
  EXPECT_EQ(t.points[1], point({0.5, 0.5}));
  EXPECT_EQ(t.points.front(), point({0, 0}));
  EXPECT_EQ(t.points.back(), point({1, 1}));
}

TEST(InitLinear, DefaultLengthIsFifty) {
  EXPECT_EQ(init_linear(point({0}), point({1})).length(), 50u);
}

TEST(InitLinear, DegenerateSegmentRepeatsThePoint) {
  const Trajectory t = init_linear(point({0.3, -2}), point({0.3, -2}), 7);
  for (const auto& p : t.points) EXPECT_EQ(p, point({0.3, -2}));
}

TEST(InitLinear, RejectsBadInput) {
  EXPECT_THROW(init_linear(point({0}), point({0, 1}), 5), std::invalid_argument);
  EXPECT_THROW(init_linear(point({0}), point({1}), 2), std::invalid_argument);
}

TEST(LossDist, HandValues) {
  EXPECT_EQ(loss_dist(init_linear(point({2, 2}), point({2, 2}), 9)), 0.0);
  Trajectory t;
  t.points = {point({0}), point({0.5}), point({1})};
  EXPECT_DOUBLE_EQ(loss_dist(t), 0.5);
}

TEST(LossDist, EquispacedLineIsTheMinimiser) {
  Rng rng(5);
  const Trajectory line = init_linear(random_point(6, rng), random_point(6, rng), 12);
  const double base = loss_dist(line);
  for (int trial = 0; trial < 50; ++trial) {
    Trajectory moved = line;
    for (std::size_t i = 1; i + 1 < moved.length(); ++i) {
      for (double& v : moved.points[i].values) v += 0.05 * standard_normal(rng);
    }
    EXPECT_GT(loss_dist(moved), base);
  }
  for (std::size_t i = 1; i + 1 < line.length(); ++i) {
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_NEAR(2 * line.points[i].values[k], line.points[i - 1].values[k] + line.points[i + 1].values[k], 1e-12);
    }
  }
}

TEST(LossId, UniformStubGivesZero) {
  Rng rng(1);
  const Generator g = tiny_generator(4, 2, rng);
  const Classifier uniform = constant_classifier(9, {0.25, 0.25, 0.25});
  EXPECT_EQ(loss_id(perturbed_line(4, 10, rng), g, uniform), 0.0);
}

TEST(LossId, OneHotStubGivesThreeLnTwo) {
  Rng rng(1);
  const Generator g = tiny_generator(4, 2, rng);
  const Classifier one_hot = constant_classifier(9, {1000.0, 0.0});
  const Trajectory t = perturbed_line(4, 3, rng);
  EXPECT_NEAR(loss_id(t, g, one_hot), 3 * kLn2, 1e-12);
  const Classifier cls = constant_classifier(9, {0.0, 0.0});
  EXPECT_NEAR(evaluate_loss(t, {g, one_hot, cls}, {}).identity, 3 * kLn2, 1e-12);
}

TEST(LossId, RejectsSingleIdentity) {
  Rng rng(1);
  const Generator g = tiny_generator(4, 2, rng);
  EXPECT_THROW(loss_id(perturbed_line(4, 3, rng), g, constant_classifier(9, {1.0})), std::invalid_argument);
}

TEST(LossClass, ConfidentStubGivesZero) {
  Rng rng(2);
  const Generator g = tiny_generator(4, 2, rng);
  const Classifier sure = constant_classifier(9, {0.0, 1000.0});
  EXPECT_EQ(loss_class(perturbed_line(4, 10, rng, 1), g, sure, 1), 0.0);
}

TEST(LossClass, UniformStubOverFiftyPointsGivesFiftyLnTwo) {
  Rng rng(2);
  const Generator g = tiny_generator(4, 2, rng);
  const Classifier flat = constant_classifier(9, {0.0, 0.0});
  const Trajectory t = perturbed_line(4, 50, rng);
  EXPECT_NEAR(loss_class(t, g, flat, 0), 50 * kLn2, 1e-10);
  const Classifier id = constant_classifier(9, {0.0, 0.0, 0.0});
  EXPECT_NEAR(evaluate_loss(t, {g, id, flat}, {}).label, 50 * kLn2, 1e-10);
}

TEST(LossClass, RejectsInvalidLabel) {
  Rng rng(2);
  const Generator g = tiny_generator(4, 2, rng);
  const Classifier flat = constant_classifier(9, {0.0, 0.0});
  EXPECT_THROW(loss_class(perturbed_line(4, 5, rng), g, flat, 2), std::invalid_argument);
  Trajectory bad = perturbed_line(4, 5, rng);
  bad.label = 3;
  EXPECT_THROW(evaluate_loss(bad, {g, flat, flat}, {}), std::invalid_argument);
}

TEST(PlanLoss, GraphValuesMatchPlainEvaluation) {
  const Stubs s = random_stubs(3);
  Rng rng(3);
  const Trajectory t = perturbed_line(4, 9, rng, 1);
  const LossTerms terms = evaluate_loss(t, s.models(), {0.1, 1.0});
  EXPECT_NEAR(terms.dist, loss_dist(t), 1e-12);
  EXPECT_NEAR(terms.identity, loss_id(t, s.g, s.id), 1e-12);
  EXPECT_NEAR(terms.label, loss_class(t, s.g, s.cls, 1), 1e-12);
  EXPECT_NEAR(terms.total, terms.dist + 0.1 * terms.identity + terms.label, 1e-12);
}

class PlanGradient : public ::testing::TestWithParam<int> {};

TEST_P(PlanGradient, EachTermMatchesFiniteDifferences) {
  const Stubs s = random_stubs(100 + GetParam());
  Rng rng(200 + GetParam());
  const int label = GetParam() % 2;
  const Trajectory t = perturbed_line(4, 6, rng, label);
  const Tensor at = interior_of(t);

  auto total_at = [&](const LossWeights& w) {
    return [&, w](const Tensor& x) { return evaluate_loss(with_interior(t, x), s.models(), w).total; };
  };
  const LossWeights plan_w{0.1, 1.0};
  const Tensor g_total = interior_gradient(t, s.models(), plan_w);
  EXPECT_LT(relative_error(g_total, finite_difference(total_at(plan_w), at)), 1e-4);

  const Tensor g_dist = interior_gradient(t, s.models(), {0.0, 0.0});
  EXPECT_LT(relative_error(g_dist, finite_difference([&](const Tensor& x) { return loss_dist(with_interior(t, x)); },
                                                     at)),
            1e-4);

  Tensor g_id = interior_gradient(t, s.models(), {1.0, 0.0});
  Tensor g_cls = interior_gradient(t, s.models(), {0.0, 1.0});
  for (std::size_t i = 0; i < g_id.size(); ++i) {
    g_id[i] -= g_dist[i];
    g_cls[i] -= g_dist[i];
  }
  EXPECT_LT(relative_error(g_id, finite_difference([&](const Tensor& x) { return loss_id(with_interior(t, x), s.g, s.id); },
                                                   at)),
            1e-4);
  EXPECT_LT(relative_error(g_cls, finite_difference(
                                      [&](const Tensor& x) { return loss_class(with_interior(t, x), s.g, s.cls, label); },
                                      at)),
            1e-4);
}

INSTANTIATE_TEST_SUITE_P(RandomProbes, PlanGradient, ::testing::Range(0, 10));

TEST(Optimize, ZeroStepsReturnsInput) {
  const Stubs s = random_stubs(4);
  Rng rng(4);
  const Trajectory t = perturbed_line(4, 8, rng);
  const auto out = optimize_trajectory(t, s.models(), {}, 0, 0.1);
  EXPECT_EQ(out.trajectory, t);
  EXPECT_EQ(out.trace.steps.size(), 1u);
}

TEST(Optimize, EndpointsArePinnedBitForBit) {
  const Stubs s = random_stubs(5);
  Rng rng(5);
  for (const LossWeights w : {LossWeights{0.1, 1.0}, LossWeights{5.0, 0.0}, LossWeights{0.0, 0.0}}) {
    const Trajectory t = perturbed_line(4, 10, rng);
    const auto out = optimize_trajectory(t, s.models(), w, 40, 0.1);
    EXPECT_EQ(out.trajectory.points.front(), t.points.front());
    EXPECT_EQ(out.trajectory.points.back(), t.points.back());
    EXPECT_NE(out.trajectory.points[4], t.points[4]);
    EXPECT_EQ(out.trace.steps.size(), 41u);
  }
}

TEST(Optimize, PureDistanceLossNeverIncreasesAtSmallRate) {
  const Stubs s = random_stubs(6);
  Rng rng(6);
  const Trajectory t = perturbed_line(4, 12, rng);
  const auto out = optimize_trajectory(t, s.models(), {0.0, 0.0}, 300, 1e-3);
  for (std::size_t k = 1; k < out.trace.steps.size(); ++k) {
    EXPECT_LE(out.trace.steps[k].total, out.trace.steps[k - 1].total) << "step " << k;
  }
  EXPECT_LT(out.trace.steps.back().total, out.trace.steps.front().total);
}

TEST(Optimize, PureDistanceLossStraightensAPerturbedPath) {
  const Stubs s = random_stubs(6);
  Rng rng(6);
  const Trajectory t = perturbed_line(4, 12, rng);
  const auto out = optimize_trajectory(t, s.models(), {0.0, 0.0}, 3000, 0.01);
  const Trajectory line = init_linear(t.points.front(), t.points.back(), 12);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.trajectory.points[i].values[k], line.points[i].values[k], 1e-3);
  }
}

TEST(Optimize, LinearInitialisationIsAnExactFixedPoint) {
  const Stubs s = random_stubs(6, 16);
  Rng rng(16);
  const Trajectory line = init_linear(random_point(16, rng, 3.0), random_point(16, rng, 3.0), 50);
  const Tensor grad = interior_gradient(line, s.models(), {0.0, 0.0});
  for (double g : grad.values()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(optimize_trajectory(line, s.models(), {0.0, 0.0}, 100, 0.1).trajectory, line);
}

TEST(Optimize, DefaultWeightsDoNotEndAboveStart) {
  const Stubs s = random_stubs(7);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Trajectory t = init_linear(random_point(4, rng), random_point(4, rng), 20, trial % 2);
    const auto out = optimize_trajectory(t, s.models(), {});
    EXPECT_LE(out.trace.steps.back().total, out.trace.steps.front().total);
  }
}

TEST(Optimize, ReversedTrajectoryGivesReversedPoints) {
  const Stubs s = random_stubs(8);
  Rng rng(8);
  const Trajectory t = perturbed_line(4, 10, rng, 1, 0.1);
  Trajectory rev = t;
  std::reverse(rev.points.begin(), rev.points.end());
  const auto fwd = optimize_trajectory(t, s.models(), {}, 60, 0.1);
  const auto bwd = optimize_trajectory(rev, s.models(), {}, 60, 0.1);
  for (std::size_t i = 0; i < t.length(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(fwd.trajectory.points[i].values[k], bwd.trajectory.points[t.length() - 1 - i].values[k], 1e-9);
    }
  }
  EXPECT_NEAR(fwd.trace.steps.back().total, bwd.trace.steps.back().total, 1e-9);
}

TEST(Optimize, BatchesAndWorkersDoNotChangeResults) {
  const Stubs s = random_stubs(9);
  Rng rng(9);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 19; ++i) trajs.push_back(perturbed_line(4, 7 + i % 3, rng, i % 2));
  const auto serial = optimize_trajectories(trajs, s.models(), {}, 25, 0.1, 1);
  const auto parallel = optimize_trajectories(trajs, s.models(), {}, 25, 0.1, 3);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto alone = optimize_trajectory(trajs[i], s.models(), {}, 25, 0.1);
    EXPECT_EQ(alone.trajectory, serial[i].trajectory) << i;
    EXPECT_EQ(alone.trajectory, parallel[i].trajectory) << i;
    EXPECT_EQ(alone.trace.steps.back().total, parallel[i].trace.steps.back().total);
  }
}

TEST(Optimize, DivergenceReportsStepAndTrace) {
  const Stubs s = random_stubs(10);
  Rng rng(10);
  const Trajectory t = perturbed_line(4, 6, rng);
  try {
    optimize_trajectory(t, s.models(), {}, 10, std::numeric_limits<double>::infinity());
    FAIL() << "expected divergence";
  } catch (const TrajectoryDivergedError& e) {
    EXPECT_EQ(e.step(), 1u);
    EXPECT_EQ(e.trace().steps.size(), 2u);
  }
}

TEST(Generate, OneImagePerPointWithPinnedEndpoints) {
  const Stubs s = random_stubs(11);
  Rng rng(11);
  const Trajectory t = init_linear(random_point(4, rng), random_point(4, rng), 50, 1);
  const auto images = generate_from_trajectory(t, s.g);
  ASSERT_EQ(images.size(), 50u);
  EXPECT_EQ(images.front().pixels, s.g.generate_image(t.points.front(), 1).pixels);
  EXPECT_EQ(images.back().pixels, s.g.generate_image(t.points.back(), 1).pixels);
  for (const auto& img : images) {
    EXPECT_EQ(img.label, 1);
    EXPECT_EQ(img.origin, Origin::synthetic);
  }
}

TEST(TrajectoryFormat, RoundTripsExactly) {
  Rng rng(12);
  const Trajectory t = perturbed_line(16, 50, rng, 1);
  std::stringstream io;
  write_trajectory(io, t, {{0.1, 1.0}, 100, 0.1, 42});
  TrajectoryMeta meta;
  const Trajectory back = read_trajectory(io, &meta);
  EXPECT_EQ(back, t);
  EXPECT_EQ(meta.seed, 42u);
  EXPECT_EQ(meta.steps, 100u);
  EXPECT_EQ(meta.weights.identity, 0.1);
  std::stringstream bad("latnav-trajectory 1\nT 3\nd 1\n");
  EXPECT_THROW(read_trajectory(bad), std::runtime_error);
}

TEST(TrajectoryFormat, TraceCsvHasOneRowPerEvaluation) {
  LossTrace trace;
  trace.steps.resize(101);
  std::ostringstream out;
  write_trace_csv(out, trace);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 102);
  EXPECT_EQ(text.substr(0, text.find('\n')), "step,dist,identity,class,total,identity_confidence");
}
