#pragma once

// Privacy and utility measurements: membership inference against a trained
// classifier, Frechet distance between feature sets, mean-minimum feature
// distance to the real set (mmL), and downstream accuracy over several runs.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "latnav/dataset.hpp"
#include "latnav/models.hpp"
#include "latnav/tensor.hpp"

namespace latnav {

// --- membership inference ------------------------------------------------------------

struct MiaConfig {
  std::vector<std::size_t> hidden{32, 32};
  double train_fraction = 0.3;
  double val_fraction = 0.1;  // evaluation gets the rest (0.6)
  std::size_t steps = 1500;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
};

struct MiaReport {
  double accuracy = 0.5;         // balanced accuracy on the evaluation slice
  double val_accuracy = 0.5;
  std::size_t per_side = 0;      // members used = non-members used
  std::size_t train_per_side = 0;
  std::size_t val_per_side = 0;
  std::size_t eval_per_side = 0;
  std::uint64_t seed = 0;
};

// Sorted (descending) softmax vector followed by the cross-entropy of the
// true label: one attack feature row per sample.
Tensor attack_features(const Classifier& target, const Samples& samples);

// Members and non-members are shuffled and cut to the same size, then each
// side is sliced train/val/eval. The attacker is an MLP over attack features.
MiaReport mia_attack(const Classifier& target, const Samples& members, const Samples& non_members,
                     const MiaConfig& config);

double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth);

// --- distribution metrics -------------------------------------------------------------

struct FrechetResult {
  double distance = 0.0;
  bool regularized = false;  // epsilon * I added to a singular covariance
};

inline constexpr double kCovarianceEpsilon = 1e-6;

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), rows are samples.
FrechetResult frechet_distance_ex(const Tensor& feats_a, const Tensor& feats_b);
double frechet_distance(const Tensor& feats_a, const Tensor& feats_b);

struct MinDistances {
  std::vector<double> per_sample;
  std::vector<std::size_t> nearest;  // index into the real set
  double mean = 0.0;
};

// L2 between feature rows; per synthetic row the minimum over real rows.
MinDistances min_feature_distances(const Tensor& synthetic, const Tensor& real);

// Same, with features taken from the extractor's unit-normalised
// penultimate layer.
MinDistances min_perceptual_distances(const Samples& synthetic, const Samples& real, const Classifier& extractor);

// --- downstream utility -----------------------------------------------------------

struct DownstreamConfig {
  std::size_t runs = 5;
  ClassifierConfig classifier{{64}, 3000, 32, 1e-3, 100, 0.0, 0.1, 0};
  // When positive, each run trains for this many passes over its training
  // set and classifier.steps is ignored.
  std::size_t epochs = 200;
  bool require_synthetic = true;
  std::uint64_t seed = 0;
  std::size_t workers = 1;  // runs train concurrently; results keep run order
};

struct DownstreamReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over runs (0 for one run)
  std::size_t steps = 0;  // optimiser steps per run
  std::vector<Classifier> models;
};

// Trains a fresh classifier per run on `train`, selects on `val`, and scores
// on `test`. With require_synthetic, any non-synthetic training row throws.
DownstreamReport downstream_eval(const Samples& train, const Samples& val, const Samples& test, std::size_t n_classes,
                                 const DownstreamConfig& config);

void write_distances_csv(std::ostream& out, const MinDistances& d);

}  // namespace latnav
