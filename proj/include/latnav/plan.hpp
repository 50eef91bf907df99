#pragma once

// Latent trajectories between two pinned endpoints, optimised under
//     L = L_dist + lambda_id * L_id + lambda_class * L_class
// where L_dist sums squared consecutive steps, L_id sums KL(softmax(phi_id) || U)
// and L_class sums the cross-entropy of phi_class against the shared label.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "latnav/models.hpp"
#include "latnav/tensor.hpp"

namespace latnav {

struct Trajectory {
  std::vector<LatentPoint> points;  // points.front() and points.back() are frozen
  int label = 0;

  std::size_t length() const noexcept { return points.size(); }
  std::size_t dim() const noexcept { return points.empty() ? 0 : points.front().dim(); }
  Tensor as_matrix() const;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct LossWeights {
  double identity = 0.1;
  double label = 1.0;
};

struct LossTerms {
  double dist = 0.0;
  double identity = 0.0;
  double label = 0.0;
  double total = 0.0;
  double identity_confidence = 0.0;  // mean max-softmax of phi_id over the points
};

// One entry per evaluation: the initial one plus one after every step.
struct LossTrace {
  std::vector<LossTerms> steps;
};

struct PlanModels {
  const Generator& generator;
  const Classifier& identity;
  const Classifier& classifier;
};

inline PlanModels plan_models(const ModelBundle& bundle) {
  return {bundle.generator, bundle.identity, bundle.classifier};
}

class TrajectoryDivergedError : public std::runtime_error {
 public:
  TrajectoryDivergedError(const std::string& what, std::size_t step, LossTrace trace)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step), trace_(std::move(trace)) {}
  std::size_t step() const noexcept { return step_; }
  const LossTrace& trace() const noexcept { return trace_; }

 private:
  std::size_t step_;
  LossTrace trace_;
};

inline constexpr std::size_t kDefaultLength = 50;
inline constexpr std::size_t kDefaultSteps = 100;
inline constexpr double kDefaultLr = 0.1;

Trajectory init_linear(const LatentPoint& w_a, const LatentPoint& w_b, std::size_t length = kDefaultLength,
                       int label = 0);

double loss_dist(const Trajectory& traj);
double loss_id(const Trajectory& traj, const Generator& g, const Classifier& phi_id);
double loss_class(const Trajectory& traj, const Generator& g, const Classifier& phi_class, int label);

LossTerms evaluate_loss(const Trajectory& traj, const PlanModels& models, const LossWeights& weights);

// Gradient of the total loss with respect to the interior points,
// (T-2) x d. Endpoint terms contribute to the value only.
Tensor interior_gradient(const Trajectory& traj, const PlanModels& models, const LossWeights& weights,
                         LossTerms* terms = nullptr);

struct OptimizedTrajectory {
  Trajectory trajectory;
  LossTrace trace;
};

// Adam on the interior points, one state per trajectory.
OptimizedTrajectory optimize_trajectory(const Trajectory& traj, const PlanModels& models, const LossWeights& weights,
                                        std::size_t steps = kDefaultSteps, double lr = kDefaultLr);

// Optimises many trajectories in fixed-size chunks spread over `workers`
// threads. Each result is bit-identical to optimize_trajectory on that
// trajectory alone, whatever the worker count.
std::vector<OptimizedTrajectory> optimize_trajectories(std::span<const Trajectory> trajs, const PlanModels& models,
                                                       const LossWeights& weights, std::size_t steps = kDefaultSteps,
                                                       double lr = kDefaultLr, std::size_t workers = 1);

std::vector<ToyImage> generate_from_trajectory(const Trajectory& traj, const Generator& g);

// --- text formats -------------------------------------------------------------
//     latnav-trajectory 1
//     T <n>
//     d <n>
//     lambda_id <x>
//     lambda_class <x>
//     steps <n>
//     lr <x>
//     seed <n>
//     class <y>
//     <d values>            (T lines, %.17g)
struct TrajectoryMeta {
  LossWeights weights;
  std::size_t steps = kDefaultSteps;
  double lr = kDefaultLr;
  std::uint64_t seed = 0;
};

void write_trajectory(std::ostream& out, const Trajectory& traj, const TrajectoryMeta& meta);
Trajectory read_trajectory(std::istream& in, TrajectoryMeta* meta = nullptr);

// CSV: step,dist,identity,class,total,identity_confidence
void write_trace_csv(std::ostream& out, const LossTrace& trace);

}  // namespace latnav
