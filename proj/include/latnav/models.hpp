#pragma once

// The toy generator and classifiers, their training loops, and latent
// projection (GAN inversion) of real images.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "latnav/autodiff.hpp"
#include "latnav/dataset.hpp"
#include "latnav/mlp.hpp"
#include "latnav/tensor.hpp"

namespace latnav {

// A point of the generator's latent space.
struct LatentPoint {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const LatentPoint&, const LatentPoint&) = default;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& what, std::uint64_t seed, std::size_t step)
      : std::runtime_error(what + " (seed " + std::to_string(seed) + ", step " + std::to_string(step) + ")"),
        seed_(seed),
        step_(step) {}
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::uint64_t seed_;
  std::size_t step_;
};

// Class-conditional generator: [w, onehot(y)] -> MLP -> tanh -> H x W.
struct Generator {
  Mlp net;
  std::size_t latent_dim = 16;
  std::size_t n_classes = 2;
  std::size_t height = 16;
  std::size_t width = 16;

  std::size_t pixel_count() const { return height * width; }

  // Rows of `latents` are latent points; output rows are flattened images.
  ad::Var forward(ad::Graph& g, const BoundMlp& bound, ad::Var latents, std::span<const int> labels) const;
  Tensor generate(const Tensor& latents, std::span<const int> labels) const;
  ToyImage generate_image(const LatentPoint& w, int label) const;
};

struct Classifier {
  Mlp net;

  std::size_t n_outputs() const { return net.output_dim(); }
  Tensor logits(const Tensor& inputs) const { return mlp_logits(net, inputs); }
  // Unit-normalised penultimate activations.
  Tensor features(const Tensor& inputs) const;
  std::vector<int> predict(const Tensor& inputs) const;
  double accuracy(const Samples& samples) const;
};

struct ModelBundle {
  Generator generator;
  Classifier identity;    // frozen during trajectory optimisation
  Classifier classifier;  // frozen during trajectory optimisation
  std::optional<Classifier> downstream;
};

// --- GAN ----------------------------------------------------------------------

struct GanConfig {
  std::size_t latent_dim = 16;
  std::vector<std::size_t> generator_hidden{128};
  std::vector<std::size_t> discriminator_hidden{128};
  std::size_t steps = 3000;
  std::size_t batch = 64;
  double lr = 1e-3;
  double beta1 = 0.5;
  std::uint64_t seed = 0;
  // Logged pass/fail line: discriminator accuracy on fresh real/fake batches
  // should stay below this at the end of training.
  double discriminator_threshold = 0.8;
};

struct GanLogEntry {
  std::size_t step;
  double d_loss;
  double g_loss;
};

struct GanResult {
  Generator generator;
  Mlp discriminator;
  std::vector<GanLogEntry> log;
  double final_discriminator_accuracy = 0.0;
};

// Non-saturating logistic GAN loss with alternating single D/G steps,
// trained on `indices` of `data`.
GanResult train_tiny_gan(const LabeledDataset& data, std::span<const std::size_t> indices, const GanConfig& config);

// --- classifiers ------------------------------------------------------------------

enum class ClassifierTarget { identity, label };

struct ClassifierConfig {
  std::vector<std::size_t> hidden{64};
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t eval_every = 100;
  double input_noise = 0.0;          // Gaussian augmentation std per batch
  double identity_val_noise = 0.1;   // held-out noisy copies for identity selection
  std::uint64_t seed = 0;
};

struct TrainedClassifier {
  Classifier model;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::size_t selected_step = 0;
  // For identity targets: output k corresponds to identity output_identity[k].
  std::vector<int> output_identity;
};

// Adam on mean cross-entropy; the returned weights are those with the best
// validation accuracy seen at the evaluation points (ties keep the later).
TrainedClassifier fit_classifier(const Samples& train, const Samples& val, std::size_t n_outputs,
                                 const ClassifierConfig& config);

// Trains on the original training split. Identity targets also use every
// projection image of `data` and select on noisy copies of the training
// images. Rejects tasks with fewer than two distinct labels.
TrainedClassifier train_classifier(const LabeledDataset& data, ClassifierTarget target, const ClassifierConfig& config);

// --- projection ------------------------------------------------------------------

struct ProjectionConfig {
  std::size_t restarts = 5;
  std::size_t steps = 500;
  double lr = 0.05;
  std::uint64_t seed = 0;
  bool record_losses = false;
};

struct Projection {
  LatentPoint latent;       // argmin over restarts
  double error = 0.0;       // mean squared pixel error of `latent`
  std::size_t best_restart = 0;
  std::vector<LatentPoint> restart_latents;
  std::vector<double> restart_errors;  // +inf for discarded restarts
  // Accepted-step losses per restart (only with record_losses).
  std::vector<std::vector<double>> accepted_losses;
};

// Restart r of image `key` starts from N(0, I) drawn from (seed, key, r), so
// a run with more restarts contains every restart of a run with fewer.
std::vector<Projection> project_images(std::span<const ToyImage> images, const Generator& generator,
                                       const ProjectionConfig& config);

Projection project_image(const ToyImage& image, const Generator& generator, std::size_t restarts, std::size_t steps,
                         std::uint64_t seed = 0);

struct AugmentationConfig {
  bool enabled = true;
  std::size_t per_identity = 5;
  ProjectionConfig projection;
};

// Appends G(w_r) for each projection restart of every training identity,
// labelled with the source identity and class. `projections` may carry
// precomputed results for data.train (same order); otherwise they are
// computed here.
LabeledDataset augment_identity_with_projections(const LabeledDataset& data, const Generator& generator,
                                                 const AugmentationConfig& config,
                                                 std::span<const Projection> projections = {});

// --- checkpoints -------------------------------------------------------------------
// Text format, one header line per key, then each parameter tensor:
//     latnav-checkpoint 1
//     kind <generator|classifier|discriminator>
//     seed <n>
//     config_hash <hex>
//     activation <relu|tanh|leaky_relu>
//     meta <key> <value>            (zero or more)
//     layers <L>
//     tensor <rows> <cols>           (2L of these, weight then bias)
//     <values, %.17g, one row per line>
struct CheckpointInfo {
  std::string kind;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, std::string> meta;
};

void write_checkpoint(std::ostream& out, const Mlp& net, const CheckpointInfo& info);
Mlp read_checkpoint(std::istream& in, CheckpointInfo& info);

void save_generator(const std::filesystem::path& path, const Generator& g, std::uint64_t seed,
                    const std::string& config_hash);
Generator load_generator(const std::filesystem::path& path, CheckpointInfo* info = nullptr);
void save_classifier(const std::filesystem::path& path, const Classifier& c, std::uint64_t seed,
                     const std::string& config_hash, const std::map<std::string, std::string>& meta = {});
Classifier load_classifier(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

std::string_view activation_name(Activation a) noexcept;
Activation parse_activation(const std::string& name);

Tensor one_hot(std::span<const int> labels, std::size_t n_classes);

}  // namespace latnav
