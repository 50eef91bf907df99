#include "latnav/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "latnav/autodiff.hpp"
#include "latnav/kernels.hpp"
#include "latnav/parallel.hpp"
#include "latnav/random.hpp"

namespace latnav {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix to_eigen(const Tensor& t) {
  Matrix m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.at(r, c);
  }
  return m;
}

void moments(const Matrix& x, Vector& mean, Matrix& cov) {
  mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

// Symmetric PSD square root with negative eigenvalues clamped to zero.
Matrix psd_sqrt(const Matrix& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

bool singular(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  return eig.eigenvalues().minCoeff() <= top * 1e-12;
}

void take(const Samples& from, std::span<const std::size_t> idx, int label, Samples& into) {
  const Samples part = subset(from, idx);
  Samples relabeled = part;
  std::fill(relabeled.labels.begin(), relabeled.labels.end(), label);
  into = into.size() == 0 ? relabeled : concat_samples(into, relabeled);
}

}  // namespace

// --- membership inference ------------------------------------------------------------

Tensor attack_features(const Classifier& target, const Samples& samples) {
  const Tensor logits = target.logits(samples.inputs);
  const Tensor probs = ad::softmax(logits);
  const std::size_t c = probs.cols();
  Tensor out = Tensor::matrix(samples.size(), c + 1);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    std::vector<double> row(probs.row(r).begin(), probs.row(r).end());
    std::sort(row.begin(), row.end(), std::greater<>());
    std::copy(row.begin(), row.end(), out.row(r).begin());
    out.at(r, c) = ad::cross_entropy(logits.row(r), samples.labels[r]);
  }
  return out;
}

double balanced_accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("balanced_accuracy: length mismatch");
  std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 1) {
      ++pos;
      tp += predicted[i] == 1;
    } else {
      ++neg;
      tn += predicted[i] != 1;
    }
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("balanced_accuracy: need both classes");
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

MiaReport mia_attack(const Classifier& target, const Samples& members, const Samples& non_members,
                     const MiaConfig& config) {
  if (config.train_fraction <= 0.0 || config.val_fraction <= 0.0 || config.train_fraction + config.val_fraction >= 1.0) {
    throw std::invalid_argument("mia_attack: slice fractions must be positive and leave room for evaluation");
  }
  const std::size_t n = std::min(members.size(), non_members.size());
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * config.train_fraction));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * config.val_fraction));
  if (n_train == 0 || n_val == 0 || n - n_train - n_val == 0) {
    throw std::invalid_argument("mia_attack: " + std::to_string(n) +
                                " samples per side are too few for train/val/eval slices");
  }

  Rng rng(mix_seed(config.seed, 0x3a));
  std::vector<std::size_t> in_idx(members.size()), out_idx(non_members.size());
  std::iota(in_idx.begin(), in_idx.end(), std::size_t{0});
  std::iota(out_idx.begin(), out_idx.end(), std::size_t{0});
  seeded_shuffle(in_idx, rng);
  seeded_shuffle(out_idx, rng);
  in_idx.resize(n);
  out_idx.resize(n);

  const Samples in_feats{attack_features(target, members), members.labels, members.origins};
  const Samples out_feats{attack_features(target, non_members), non_members.labels, non_members.origins};
  auto slice = [&](std::size_t begin, std::size_t end) {
    Samples s;
    take(in_feats, std::span(in_idx).subspan(begin, end - begin), 1, s);
    take(out_feats, std::span(out_idx).subspan(begin, end - begin), 0, s);
    return s;
  };
  const Samples train = slice(0, n_train);
  const Samples val = slice(n_train, n_train + n_val);
  const Samples eval = slice(n_train + n_val, n);

  MiaReport report;
  report.per_side = n;
  report.train_per_side = n_train;
  report.val_per_side = n_val;
  report.eval_per_side = n - n_train - n_val;
  report.seed = config.seed;

  ClassifierConfig cc;
  cc.hidden = config.hidden;
  cc.steps = config.steps;
  cc.batch = config.batch;
  cc.lr = config.lr;
  cc.eval_every = config.eval_every;
  cc.seed = mix_seed(config.seed, 0x3b);
  const TrainedClassifier attacker = fit_classifier(train, val, 2, cc);
  report.val_accuracy = balanced_accuracy(attacker.model.predict(val.inputs), val.labels);
  report.accuracy = balanced_accuracy(attacker.model.predict(eval.inputs), eval.labels);
  return report;
}

// --- distribution metrics -------------------------------------------------------------

FrechetResult frechet_distance_ex(const Tensor& feats_a, const Tensor& feats_b) {
  if (feats_a.cols() != feats_b.cols()) {
    throw std::invalid_argument("frechet_distance: feature widths differ (" + std::to_string(feats_a.cols()) + " vs " +
                                std::to_string(feats_b.cols()) + ")");
  }
  const std::size_t dim = feats_a.cols();
  if (feats_a.rows() <= dim || feats_b.rows() <= dim) {
    throw std::invalid_argument("frechet_distance: each set needs more samples than the feature dimension " +
                                std::to_string(dim));
  }
  Vector mu_a, mu_b;
  Matrix cov_a, cov_b;
  moments(to_eigen(feats_a), mu_a, cov_a);
  moments(to_eigen(feats_b), mu_b, cov_b);
  FrechetResult result;
  const Matrix eye = Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  if (singular(cov_a) || singular(cov_b)) {
    cov_a += kCovarianceEpsilon * eye;
    cov_b += kCovarianceEpsilon * eye;
    result.regularized = true;
  }
  const Matrix root_a = psd_sqrt(cov_a);
  const Matrix cross = psd_sqrt(root_a * cov_b * root_a);
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
  result.distance = std::max(0.0, value);
  return result;
}

double frechet_distance(const Tensor& feats_a, const Tensor& feats_b) {
  return frechet_distance_ex(feats_a, feats_b).distance;
}

MinDistances min_feature_distances(const Tensor& synthetic, const Tensor& real) {
  if (synthetic.rows() == 0 || real.rows() == 0) throw std::invalid_argument("min_feature_distances: empty set");
  if (synthetic.cols() != real.cols()) throw std::invalid_argument("min_feature_distances: feature widths differ");
  MinDistances out;
  out.per_sample.resize(synthetic.rows());
  out.nearest.resize(synthetic.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < synthetic.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < real.rows(); ++j) {
      const double d = kernels::squared_distance(synthetic.row(i), real.row(j));
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    out.per_sample[i] = std::sqrt(best);
    out.nearest[i] = arg;
    total += out.per_sample[i];
  }
  out.mean = total / static_cast<double>(synthetic.rows());
  return out;
}

MinDistances min_perceptual_distances(const Samples& synthetic, const Samples& real, const Classifier& extractor) {
  return min_feature_distances(extractor.features(synthetic.inputs), extractor.features(real.inputs));
}

// --- downstream utility -----------------------------------------------------------

DownstreamReport downstream_eval(const Samples& train, const Samples& val, const Samples& test, std::size_t n_classes,
                                 const DownstreamConfig& config) {
  if (train.size() == 0) throw std::invalid_argument("downstream_eval: empty training set");
  if (config.runs == 0) throw std::invalid_argument("downstream_eval: runs must be at least 1");
  if (config.classifier.batch == 0) throw std::invalid_argument("downstream_eval: batch must be positive");
  if (config.require_synthetic) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.origins.at(i) != Origin::synthetic) {
        throw std::logic_error("downstream_eval: training row " + std::to_string(i) + " has origin '" +
                               std::string(origin_name(train.origins[i])) + "', only synthetic images are allowed");
      }
    }
  }
  const std::set<int> present(train.labels.begin(), train.labels.end());
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!present.count(static_cast<int>(c))) {
      throw std::invalid_argument("downstream_eval: class " + std::to_string(c) + " is absent from the training set");
    }
  }
  DownstreamReport report;
  report.steps = config.epochs > 0 ? (config.epochs * train.size() + config.classifier.batch - 1) / config.classifier.batch
                                   : config.classifier.steps;
  report.accuracies.resize(config.runs);
  report.models.resize(config.runs);
  parallel_for(config.runs, config.workers, [&](std::size_t run) {
    ClassifierConfig cc = config.classifier;
    cc.seed = mix_seed(config.seed, 0xd0, run);
    cc.steps = report.steps;
    TrainedClassifier trained = fit_classifier(train, val, n_classes, cc);
    report.accuracies[run] = trained.model.accuracy(test);
    report.models[run] = std::move(trained.model);
  });
  const double n = static_cast<double>(config.runs);
  report.mean = std::accumulate(report.accuracies.begin(), report.accuracies.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : report.accuracies) ss += (a - report.mean) * (a - report.mean);
  report.std = config.runs > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return report;
}

void write_distances_csv(std::ostream& out, const MinDistances& d) {
  out << "sample,min_distance,nearest_real\n";
  char buf[64];
  for (std::size_t i = 0; i < d.per_sample.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", d.per_sample[i]);
    out << i << ',' << buf << ',' << d.nearest[i] << '\n';
  }
}

}  // namespace latnav
