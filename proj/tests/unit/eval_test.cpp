#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "latnav/eval.hpp"
#include "latnav/random.hpp"
#include "../support/stub_models.hpp"

using namespace latnav;

namespace {

Tensor gaussian_rows(std::size_t n, const std::vector<double>& mean, const std::vector<double>& stddev, Rng& rng) {
  Tensor t = Tensor::matrix(n, mean.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < mean.size(); ++c) t.at(r, c) = mean[c] + stddev[c] * standard_normal(rng);
  }
  return t;
}

Samples random_samples(std::size_t n, std::size_t dim, std::size_t n_classes, Origin origin, Rng& rng) {
  Samples s;
  s.inputs = Tensor::matrix(n, dim);
  for (double& v : s.inputs.values()) v = standard_normal(rng);
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(static_cast<int>(i % n_classes));
    s.origins.push_back(origin);
  }
  return s;
}

// Two well separated Gaussian blobs, one per class.
Samples blob_samples(std::size_t n, std::size_t dim, Origin origin, Rng& rng) {
  Samples s = random_samples(n, dim, 2, origin, rng);
  for (std::size_t i = 0; i < n; ++i) s.inputs.at(i, 0) += s.labels[i] == 0 ? -3.0 : 3.0;
  return s;
}

}  // namespace

TEST(BalancedAccuracy, HandValue) {
  const std::vector<int> truth = {1, 1, 1, 1, 0, 0};
  const std::vector<int> pred = {1, 1, 1, 0, 0, 1};
  EXPECT_DOUBLE_EQ(balanced_accuracy(pred, truth), 0.5 * (0.75 + 0.5));
  EXPECT_THROW(balanced_accuracy(std::vector<int>{1}, std::vector<int>{1}), std::invalid_argument);
}

TEST(Frechet, IdenticalSetsAreAtZero) {
  Rng rng(1);
  const Tensor a = gaussian_rows(200, {0.0, 1.0, -2.0}, {1.0, 0.5, 2.0}, rng);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-9);
}

TEST(Frechet, IsSymmetricAndNonNegative) {
  Rng rng(2);
  const Tensor a = gaussian_rows(300, {0.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 1.0}, rng);
  const Tensor b = gaussian_rows(250, {0.5, -0.2, 0.0, 1.0}, {2.0, 0.3, 1.0, 1.5}, rng);
  const double ab = frechet_distance(a, b);
  EXPECT_GT(ab, 0.0);
  EXPECT_NEAR(ab, frechet_distance(b, a), 1e-9 * ab);
}

TEST(Frechet, OneDimensionalMatchesSampleMoments) {
  Rng rng(3);
  const Tensor a = gaussian_rows(50, {0.0}, {1.0}, rng);
  const Tensor b = gaussian_rows(70, {2.0}, {3.0}, rng);
  auto moments = [](const Tensor& t, double& mu, double& sd) {
    mu = 0.0;
    for (double v : t.values()) mu += v;
    mu /= static_cast<double>(t.rows());
    double ss = 0.0;
    for (double v : t.values()) ss += (v - mu) * (v - mu);
    sd = std::sqrt(ss / static_cast<double>(t.rows() - 1));
  };
  double ma, sa, mb, sb;
  moments(a, ma, sa);
  moments(b, mb, sb);
  const double expected = (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb);
  EXPECT_NEAR(frechet_distance(a, b), expected, 1e-10 * expected);
}

TEST(Frechet, MonteCarloApproachesDiagonalClosedForm) {
  // N(0, I) vs N(mu, diag(s^2)): |mu|^2 + sum (1 - s_i)^2 = 1.25 + 1 + 0.25
  Rng rng(4);
  const Tensor a = gaussian_rows(400000, {0.0, 0.0}, {1.0, 1.0}, rng);
  const Tensor b = gaussian_rows(400000, {1.0, 0.5}, {2.0, 0.5}, rng);
  const double expected = 2.5;
  EXPECT_NEAR(frechet_distance(a, b), expected, 0.05);
}

TEST(Frechet, SingularCovarianceIsRegularised) {
  Rng rng(5);
  Tensor a = gaussian_rows(100, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, rng);
  for (std::size_t r = 0; r < a.rows(); ++r) a.at(r, 2) = 2.0 * a.at(r, 0);  // rank 2
  const Tensor b = gaussian_rows(100, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, rng);
  const FrechetResult res = frechet_distance_ex(a, b);
  EXPECT_TRUE(res.regularized);
  EXPECT_TRUE(std::isfinite(res.distance));
  EXPECT_FALSE(frechet_distance_ex(b, b).regularized);
}

TEST(Frechet, RejectsTooFewSamplesAndWidthMismatch) {
  Rng rng(6);
  const Tensor small = gaussian_rows(3, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, rng);
  const Tensor big = gaussian_rows(30, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, rng);
  const Tensor narrow = gaussian_rows(30, {0.0, 0.0}, {1.0, 1.0}, rng);
  EXPECT_THROW(frechet_distance(small, big), std::invalid_argument);
  EXPECT_THROW(frechet_distance(big, narrow), std::invalid_argument);
}

TEST(MinDistance, HandValues) {
  const Tensor real = Tensor({2, 2}, {0.0, 0.0, 3.0, 4.0});
  const Tensor synth = Tensor({3, 2}, {0.0, 1.0, 3.0, 4.0, 6.0, 8.0});
  const MinDistances d = min_feature_distances(synth, real);
  EXPECT_EQ(d.per_sample, (std::vector<double>{1.0, 0.0, 5.0}));
  EXPECT_EQ(d.nearest, (std::vector<std::size_t>{0, 1, 1}));
  EXPECT_DOUBLE_EQ(d.mean, 2.0);
}

TEST(MinDistance, ExactCopiesAreAtZero) {
  Rng rng(7);
  const Tensor real = gaussian_rows(40, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, rng);
  EXPECT_EQ(min_feature_distances(real, real).mean, 0.0);
}

TEST(MinDistance, GrowingTheRealSetNeverIncreasesDistances) {
  Rng rng(8);
  const Tensor real = gaussian_rows(60, {0.0, 0.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 1.0}, rng);
  const Tensor synth = gaussian_rows(25, {0.3, 0.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 1.0}, rng);
  Tensor part = Tensor::matrix(30, 4);
  for (std::size_t r = 0; r < 30; ++r) {
    for (std::size_t c = 0; c < 4; ++c) part.at(r, c) = real.at(r, c);
  }
  const MinDistances small = min_feature_distances(synth, part);
  const MinDistances large = min_feature_distances(synth, real);
  for (std::size_t i = 0; i < synth.rows(); ++i) EXPECT_LE(large.per_sample[i], small.per_sample[i]);
  EXPECT_LE(large.mean, small.mean);
}

TEST(MinDistance, PerceptualUsesUnitFeatures) {
  Rng rng(9);
  const Classifier extractor = latnav::testing::tiny_classifier(5, 3, rng);
  const Samples real = random_samples(20, 5, 3, Origin::real, rng);
  const MinDistances self = min_perceptual_distances(real, real, extractor);
  EXPECT_EQ(self.mean, 0.0);
  const Samples other = random_samples(10, 5, 3, Origin::synthetic, rng);
  const MinDistances d = min_perceptual_distances(other, real, extractor);
  for (double v : d.per_sample) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0 + 1e-12);  // both sides on the unit sphere
  }
}

TEST(MinDistance, CsvHasOneRowPerSample) {
  const MinDistances d{{0.5, 1.25}, {3, 0}, 0.875};
  std::ostringstream out;
  write_distances_csv(out, d);
  EXPECT_EQ(out.str(), "sample,min_distance,nearest_real\n0,0.5,3\n1,1.25,0\n");
}

TEST(Mia, AttackFeaturesAreSortedSoftmaxAndLoss) {
  const Classifier target = latnav::testing::constant_classifier(2, {0.0, std::log(3.0)});
  Samples s;
  s.inputs = Tensor::matrix(2, 2);
  s.labels = {0, 1};
  s.origins = {Origin::real, Origin::real};
  const Tensor f = attack_features(target, s);
  ASSERT_EQ(f.cols(), 3u);
  EXPECT_NEAR(f.at(0, 0), 0.75, 1e-12);
  EXPECT_NEAR(f.at(0, 1), 0.25, 1e-12);
  EXPECT_NEAR(f.at(0, 2), std::log(4.0), 1e-12);
  EXPECT_NEAR(f.at(1, 2), std::log(4.0 / 3.0), 1e-12);
}

TEST(Mia, IdenticalOutputsGiveChance) {
  Rng rng(10);
  const Classifier target = latnav::testing::constant_classifier(4, {0.3, -0.1, 0.2});
  Samples members = random_samples(200, 4, 1, Origin::real, rng);
  Samples non_members = random_samples(240, 4, 1, Origin::real, rng);
  MiaConfig cfg;
  cfg.steps = 200;
  const MiaReport r = mia_attack(target, members, non_members, cfg);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.per_side, 200u);
  EXPECT_EQ(r.train_per_side + r.val_per_side + r.eval_per_side, 200u);
  EXPECT_EQ(r.train_per_side, 60u);
  EXPECT_EQ(r.val_per_side, 20u);
}

TEST(Mia, DetectsAMemorisingTarget) {
  Rng rng(11);
  const Samples members = random_samples(160, 24, 2, Origin::real, rng);
  const Samples non_members = random_samples(160, 24, 2, Origin::real, rng);
  ClassifierConfig cc;
  cc.hidden = {128};
  cc.steps = 1500;
  cc.lr = 3e-3;
  cc.seed = 1;
  const Classifier target = fit_classifier(members, members, 2, cc).model;
  ASSERT_GT(target.accuracy(members), 0.95);
  MiaConfig cfg;
  cfg.seed = 2;
  const MiaReport r = mia_attack(target, members, non_members, cfg);
  EXPECT_GT(r.accuracy, 0.75);
  EXPECT_EQ(mia_attack(target, members, non_members, cfg).accuracy, r.accuracy);
}

TEST(Mia, RejectsTinyOrMisconfiguredInputs) {
  Rng rng(12);
  const Classifier target = latnav::testing::constant_classifier(4, {0.0, 0.0});
  const Samples few = random_samples(3, 4, 2, Origin::real, rng);
  EXPECT_THROW(mia_attack(target, few, few, {}), std::invalid_argument);
  const Samples many = random_samples(100, 4, 2, Origin::real, rng);
  MiaConfig bad;
  bad.train_fraction = 0.9;
  EXPECT_THROW(mia_attack(target, many, many, bad), std::invalid_argument);
}

TEST(Downstream, RejectsNonSyntheticTraining) {
  Rng rng(13);
  const Samples train = blob_samples(40, 3, Origin::real, rng);
  const Samples val = blob_samples(20, 3, Origin::real, rng);
  DownstreamConfig cfg;
  cfg.runs = 1;
  cfg.epochs = 0;
  cfg.classifier.steps = 10;
  EXPECT_THROW(downstream_eval(train, val, val, 2, cfg), std::logic_error);
  cfg.require_synthetic = false;
  EXPECT_NO_THROW(downstream_eval(train, val, val, 2, cfg));
}

TEST(Downstream, RejectsAMissingClass) {
  Rng rng(14);
  const Samples train = blob_samples(40, 3, Origin::synthetic, rng);
  const Samples val = blob_samples(20, 3, Origin::real, rng);
  DownstreamConfig cfg;
  cfg.runs = 1;
  cfg.epochs = 0;
  cfg.classifier.steps = 10;
  EXPECT_THROW(downstream_eval(train, val, val, 3, cfg), std::invalid_argument);
}

TEST(Downstream, ReportsMeanAndSampleStd) {
  Rng rng(15);
  const Samples train = blob_samples(200, 3, Origin::synthetic, rng);
  const Samples val = blob_samples(60, 3, Origin::real, rng);
  const Samples test = blob_samples(200, 3, Origin::real, rng);
  DownstreamConfig cfg;
  cfg.runs = 3;
  cfg.epochs = 0;
  cfg.classifier.steps = 300;
  cfg.classifier.hidden = {8};
  cfg.seed = 5;
  const DownstreamReport r = downstream_eval(train, val, test, 2, cfg);
  ASSERT_EQ(r.accuracies.size(), 3u);
  ASSERT_EQ(r.models.size(), 3u);
  double mean = (r.accuracies[0] + r.accuracies[1] + r.accuracies[2]) / 3.0;
  double ss = 0.0;
  for (double a : r.accuracies) ss += (a - mean) * (a - mean);
  EXPECT_DOUBLE_EQ(r.mean, mean);
  EXPECT_DOUBLE_EQ(r.std, std::sqrt(ss / 2.0));
  EXPECT_GT(r.mean, 0.9);
  const DownstreamReport again = downstream_eval(train, val, test, 2, cfg);
  EXPECT_EQ(again.accuracies, r.accuracies);
}

TEST(Downstream, EpochBudgetScalesWithTheTrainingSet) {
  Rng rng(16);
  const Samples small = blob_samples(50, 3, Origin::synthetic, rng);
  const Samples large = blob_samples(130, 3, Origin::synthetic, rng);
  const Samples val = blob_samples(20, 3, Origin::real, rng);
  DownstreamConfig cfg;
  cfg.runs = 1;
  cfg.epochs = 4;
  cfg.classifier.batch = 16;
  cfg.classifier.steps = 999;
  EXPECT_EQ(downstream_eval(small, val, val, 2, cfg).steps, 13u);  // ceil(4 * 50 / 16)
  EXPECT_EQ(downstream_eval(large, val, val, 2, cfg).steps, 33u);  // ceil(4 * 130 / 16)
  cfg.epochs = 0;
  EXPECT_EQ(downstream_eval(small, val, val, 2, cfg).steps, 999u);
}
