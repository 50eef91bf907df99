#include "latnav/plan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "latnav/adam.hpp"
#include "latnav/autodiff.hpp"
#include "latnav/parallel.hpp"

namespace latnav {

namespace {

constexpr std::size_t kChunkTrajectories = 8;

void check_models(const Trajectory& traj, const PlanModels& models) {
  if (traj.length() < 3) throw std::invalid_argument("trajectory needs at least 3 points, got " +
                                                     std::to_string(traj.length()));
  for (const auto& p : traj.points) {
    if (p.dim() != models.generator.latent_dim) {
      throw std::invalid_argument("trajectory point of dimension " + std::to_string(p.dim()) +
                                  " but the generator expects " + std::to_string(models.generator.latent_dim));
    }
  }
  if (models.identity.n_outputs() < 2) throw std::invalid_argument("identity classifier needs n_id >= 2");
  if (traj.label < 0 || static_cast<std::size_t>(traj.label) >= models.classifier.n_outputs() ||
      static_cast<std::size_t>(traj.label) >= models.generator.n_classes) {
    throw std::invalid_argument("trajectory label " + std::to_string(traj.label) + " is not a valid class");
  }
}

std::vector<double> segment_step(const Trajectory& t) {
  const auto& a = t.points.front().values;
  const auto& b = t.points.back().values;
  const double denom = static_cast<double>(t.length() - 1);
  std::vector<double> c(a.size());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = (b[k] - a[k]) / denom;
  return c;
}

double line_coordinate(const std::vector<double>& a, const std::vector<double>& c, std::size_t i, std::size_t k) {
  return a[k] + static_cast<double>(i) * c[k];
}

// Interior points are optimised as offsets from the straight line
// w_a + i * c, c = (w_b - w_a) / (T - 1). Segment vectors are then c plus
// offset differences, so the straight line is an exact stationary point in
// floating point rather than one perturbed by rounding.
Tensor line_offsets(std::span<const Trajectory> trajs) {
  std::size_t rows = 0;
  for (const auto& t : trajs) rows += t.length() - 2;
  const std::size_t d = trajs.front().dim();
  Tensor out = Tensor::matrix(rows, d);
  std::size_t r = 0;
  for (const auto& t : trajs) {
    const auto c = segment_step(t);
    const auto& a = t.points.front().values;
    for (std::size_t i = 1; i + 1 < t.length(); ++i, ++r) {
      for (std::size_t k = 0; k < d; ++k) out.at(r, k) = t.points[i].values[k] - line_coordinate(a, c, i, k);
    }
  }
  return out;
}

struct ChunkEval {
  std::vector<LossTerms> terms;
  Tensor grad;
};

// One graph for several trajectories. Every op is row-local or reduces a
// single trajectory's rows, so each trajectory's values and gradients do not
// depend on what else shares the graph.
ChunkEval evaluate_chunk(std::span<const Trajectory> trajs, const Tensor& interior, const PlanModels& models,
                         const LossWeights& weights, bool need_grad) {
  ad::Graph g;
  const BoundMlp bg = bind_mlp(g, models.generator.net, false);
  const BoundMlp bi = bind_mlp(g, models.identity.net, false);
  const BoundMlp bc = bind_mlp(g, models.classifier.net, false);
  const ad::Var inner = need_grad ? g.variable(interior) : g.constant_view(interior);

  std::vector<ad::Var> parts, dist;
  std::vector<int> labels;
  std::size_t offset = 0;
  for (const auto& t : trajs) {
    const std::size_t n = t.length() - 2;
    const std::size_t d = t.dim();
    const auto c = segment_step(t);
    const auto& a = t.points.front().values;
    Tensor line = Tensor::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) line.at(i, k) = line_coordinate(a, c, i + 1, k);
    }
    const ad::Var offsets = ad::slice_rows(g, inner, offset, offset + n);
    const ad::Var zero = g.constant(Tensor::matrix(1, d));
    const ad::Var padded[] = {zero, offsets, zero};
    const ad::Var segments = ad::add_row_bias(g, ad::row_diff(g, ad::concat_rows(g, padded)), g.constant(Tensor::row_vector(c)));
    dist.push_back(ad::sum(g, ad::square(g, segments)));
    const ad::Var pieces[] = {g.constant(Tensor::row_vector(t.points.front().values)),
                              ad::add(g, g.constant(std::move(line)), offsets),
                              g.constant(Tensor::row_vector(t.points.back().values))};
    parts.push_back(ad::concat_rows(g, pieces));
    labels.insert(labels.end(), t.length(), t.label);
    offset += n;
  }
  const ad::Var points = ad::concat_rows(g, parts);
  const ad::Var images = models.generator.forward(g, bg, points, labels);
  const ad::Var id_logits = mlp_forward(g, bi, images).logits;
  const ad::Var cls_logits = mlp_forward(g, bc, images).logits;
  const ad::Var kl = ad::kl_to_uniform_rows(g, id_logits);
  const ad::Var ce = ad::cross_entropy_rows(g, cls_logits, labels);

  ChunkEval out;
  ad::Var grand{};
  std::size_t row = 0;
  const Tensor confidence = ad::softmax(g.value(id_logits));
  for (std::size_t p = 0; p < trajs.size(); ++p) {
    const std::size_t n = trajs[p].length();
    const ad::Var id = ad::sum(g, ad::slice_rows(g, kl, row, row + n));
    const ad::Var cls = ad::sum(g, ad::slice_rows(g, ce, row, row + n));
    const ad::Var total =
        ad::add(g, ad::add(g, dist[p], ad::scale(g, id, weights.identity)), ad::scale(g, cls, weights.label));
    LossTerms terms;
    terms.dist = g.value(dist[p]).item();
    terms.identity = g.value(id).item();
    terms.label = g.value(cls).item();
    terms.total = g.value(total).item();
    double conf = 0.0;
    for (std::size_t r = row; r < row + n; ++r) {
      const auto probs = confidence.row(r);
      conf += *std::max_element(probs.begin(), probs.end());
    }
    terms.identity_confidence = conf / static_cast<double>(n);
    out.terms.push_back(terms);
    grand = p == 0 ? total : ad::add(g, grand, total);
    row += n;
  }
  if (need_grad) {
    g.backward(grand);
    out.grad = g.grad(inner);
  }
  return out;
}

void optimize_chunk(std::span<const Trajectory> trajs, const PlanModels& models, const LossWeights& weights,
                    std::size_t steps, double lr, std::span<OptimizedTrajectory> results) {
  Tensor interior = line_offsets(trajs);
  Tensor m = Tensor::matrix(interior.rows(), interior.cols());
  Tensor v = m;
  const AdamConfig adam;
  std::vector<LossTrace> traces(trajs.size());
  const std::size_t d = interior.cols();

  for (std::size_t s = 0; s <= steps; ++s) {
    const bool update = s < steps;
    ChunkEval eval = evaluate_chunk(trajs, interior, models, weights, update);
    for (std::size_t p = 0; p < trajs.size(); ++p) {
      traces[p].steps.push_back(eval.terms[p]);
      if (!std::isfinite(eval.terms[p].total)) {
        throw TrajectoryDivergedError("trajectory " + std::to_string(p) + " loss became non-finite", s,
                                      traces[p]);
      }
    }
    if (!update) break;
    std::size_t row = 0;
    for (std::size_t p = 0; p < trajs.size(); ++p) {
      const std::size_t n = (trajs[p].length() - 2) * d;
      const std::size_t begin = row * d;
      const auto grad = eval.grad.values().subspan(begin, n);
      if (!std::all_of(grad.begin(), grad.end(), [](double x) { return std::isfinite(x); })) {
        throw TrajectoryDivergedError("trajectory " + std::to_string(p) + " gradient became non-finite", s,
                                      traces[p]);
      }
      adam_update(interior.values().subspan(begin, n), grad, m.values().subspan(begin, n),
                  v.values().subspan(begin, n), s + 1, adam, lr);
      row += trajs[p].length() - 2;
    }
  }

  std::size_t row = 0;
  for (std::size_t p = 0; p < trajs.size(); ++p) {
    Trajectory out = trajs[p];
    if (steps > 0) {
      const auto c = segment_step(out);
      const auto& a = out.points.front().values;
      for (std::size_t i = 1; i + 1 < out.length(); ++i, ++row) {
        for (std::size_t k = 0; k < d; ++k) out.points[i].values[k] = line_coordinate(a, c, i, k) + interior.at(row, k);
      }
    }
    results[p] = {std::move(out), std::move(traces[p])};
  }
}

}  // namespace

Tensor Trajectory::as_matrix() const {
  Tensor out = Tensor::matrix(length(), dim());
  for (std::size_t i = 0; i < length(); ++i) {
    std::copy(points[i].values.begin(), points[i].values.end(), out.row(i).begin());
  }
  return out;
}

Trajectory init_linear(const LatentPoint& w_a, const LatentPoint& w_b, std::size_t length, int label) {
  if (w_a.dim() != w_b.dim()) {
    throw std::invalid_argument("init_linear: endpoint dimensions differ (" + std::to_string(w_a.dim()) + " vs " +
                                std::to_string(w_b.dim()) + ")");
  }
  if (length < 3) throw std::invalid_argument("init_linear: T must be at least 3, got " + std::to_string(length));
  Trajectory traj;
  traj.label = label;
  traj.points.resize(length);
  traj.points.front() = w_a;
  traj.points.back() = w_b;
  const auto c = segment_step(traj);
  for (std::size_t i = 1; i + 1 < length; ++i) {
    auto& values = traj.points[i].values;
    values.resize(w_a.dim());
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = line_coordinate(w_a.values, c, i, k);
  }
  return traj;
}

double loss_dist(const Trajectory& traj) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < traj.length(); ++i) {
    for (std::size_t k = 0; k < traj.dim(); ++k) {
      const double diff = traj.points[i + 1].values[k] - traj.points[i].values[k];
      total += diff * diff;
    }
  }
  return total;
}

double loss_id(const Trajectory& traj, const Generator& g, const Classifier& phi_id) {
  if (phi_id.n_outputs() < 2) throw std::invalid_argument("loss_id: identity classifier needs n_id >= 2");
  const std::vector<int> labels(traj.length(), traj.label);
  const Tensor probs = ad::softmax(phi_id.logits(g.generate(traj.as_matrix(), labels)));
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) total += ad::kl_to_uniform(probs.row(r));
  return total;
}

double loss_class(const Trajectory& traj, const Generator& g, const Classifier& phi_class, int label) {
  const std::vector<int> labels(traj.length(), label);
  const Tensor logits = phi_class.logits(g.generate(traj.as_matrix(), labels));
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) total += ad::cross_entropy(logits.row(r), label);
  return total;
}

LossTerms evaluate_loss(const Trajectory& traj, const PlanModels& models, const LossWeights& weights) {
  check_models(traj, models);
  const Trajectory one[] = {traj};
  return evaluate_chunk(one, line_offsets(one), models, weights, false).terms.front();
}

Tensor interior_gradient(const Trajectory& traj, const PlanModels& models, const LossWeights& weights,
                         LossTerms* terms) {
  check_models(traj, models);
  const Trajectory one[] = {traj};
  ChunkEval eval = evaluate_chunk(one, line_offsets(one), models, weights, true);
  if (terms != nullptr) *terms = eval.terms.front();
  return std::move(eval.grad);
}

OptimizedTrajectory optimize_trajectory(const Trajectory& traj, const PlanModels& models, const LossWeights& weights,
                                        std::size_t steps, double lr) {
  return optimize_trajectories(std::span<const Trajectory>(&traj, 1), models, weights, steps, lr, 1).front();
}

std::vector<OptimizedTrajectory> optimize_trajectories(std::span<const Trajectory> trajs, const PlanModels& models,
                                                       const LossWeights& weights, std::size_t steps, double lr,
                                                       std::size_t workers) {
  if (weights.identity < 0.0 || weights.label < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  for (const auto& t : trajs) check_models(t, models);

  std::vector<OptimizedTrajectory> results(trajs.size());
  const std::size_t n_chunks = (trajs.size() + kChunkTrajectories - 1) / kChunkTrajectories;
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kChunkTrajectories;
    const std::size_t n = std::min(kChunkTrajectories, trajs.size() - begin);
    optimize_chunk(trajs.subspan(begin, n), models, weights, steps, lr,
                   std::span<OptimizedTrajectory>(results).subspan(begin, n));
  });
  return results;
}

std::vector<ToyImage> generate_from_trajectory(const Trajectory& traj, const Generator& g) {
  const std::vector<int> labels(traj.length(), traj.label);
  const Tensor flat = g.generate(traj.as_matrix(), labels);
  std::vector<ToyImage> out;
  out.reserve(traj.length());
  for (std::size_t r = 0; r < flat.rows(); ++r) {
    ToyImage img;
    img.pixels = Tensor({g.height, g.width}, std::vector<double>(flat.row(r).begin(), flat.row(r).end()));
    img.label = traj.label;
    img.origin = Origin::synthetic;
    out.push_back(std::move(img));
  }
  return out;
}

void write_trajectory(std::ostream& out, const Trajectory& traj, const TrajectoryMeta& meta) {
  char buf[32];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  out << "latnav-trajectory 1\n"
      << "T " << traj.length() << "\n"
      << "d " << traj.dim() << "\n"
      << "lambda_id " << num(meta.weights.identity) << "\n"
      << "lambda_class " << num(meta.weights.label) << "\n"
      << "steps " << meta.steps << "\n"
      << "lr " << num(meta.lr) << "\n"
      << "seed " << meta.seed << "\n"
      << "class " << traj.label << "\n";
  for (const auto& p : traj.points) {
    for (std::size_t k = 0; k < p.dim(); ++k) out << (k ? " " : "") << num(p.values[k]);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_trajectory: stream error");
}

Trajectory read_trajectory(std::istream& in, TrajectoryMeta* meta_out) {
  auto fail = [](const std::string& what) { throw std::runtime_error("read_trajectory: " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "latnav-trajectory 1") fail("bad magic line");
  auto field = [&](const char* key) {
    std::string k, v;
    if (!(in >> k >> v) || k != key) fail(std::string("expected ") + key);
    return v;
  };
  TrajectoryMeta meta;
  const std::size_t length = std::stoul(field("T"));
  const std::size_t d = std::stoul(field("d"));
  meta.weights.identity = std::stod(field("lambda_id"));
  meta.weights.label = std::stod(field("lambda_class"));
  meta.steps = std::stoul(field("steps"));
  meta.lr = std::stod(field("lr"));
  meta.seed = std::stoull(field("seed"));
  Trajectory traj;
  traj.label = std::stoi(field("class"));
  traj.points.resize(length);
  for (auto& p : traj.points) {
    p.values.resize(d);
    for (double& x : p.values) {
      if (!(in >> x)) fail("truncated point data");
    }
  }
  if (meta_out != nullptr) *meta_out = meta;
  return traj;
}

void write_trace_csv(std::ostream& out, const LossTrace& trace) {
  out << "step,dist,identity,class,total,identity_confidence\n";
  char buf[256];
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& t = trace.steps[s];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", s, t.dist, t.identity, t.label, t.total,
                  t.identity_confidence);
    out << buf;
  }
}

}  // namespace latnav
