#pragma once

// Small smooth models for exercising the trajectory losses without training.

#include <vector>

#include "latnav/models.hpp"
#include "latnav/random.hpp"

namespace latnav::testing {

inline Generator tiny_generator(std::size_t latent_dim, std::size_t n_classes, Rng& rng, std::size_t side = 3,
                                std::size_t hidden = 8) {
  Generator g;
  g.latent_dim = latent_dim;
  g.n_classes = n_classes;
  g.height = side;
  g.width = side;
  const std::size_t sizes[] = {latent_dim + n_classes, hidden, side * side};
  g.net = make_mlp(sizes, Activation::tanh, rng);
  return g;
}

inline Classifier tiny_classifier(std::size_t inputs, std::size_t outputs, Rng& rng, std::size_t hidden = 6) {
  const std::size_t sizes[] = {inputs, hidden, outputs};
  Classifier c{make_mlp(sizes, Activation::tanh, rng)};
  // Larger weights so the softmax is far from flat.
  for (Tensor* p : c.net.parameters()) {
    for (double& v : p->values()) v *= 2.0;
  }
  return c;
}

// Single linear layer with zero weights: emits `logits` for every input.
inline Classifier constant_classifier(std::size_t inputs, const std::vector<double>& logits) {
  Classifier c;
  c.net.activation = Activation::relu;
  c.net.layers.push_back({Tensor::matrix(inputs, logits.size()), Tensor::row_vector(logits)});
  return c;
}

inline LatentPoint random_point(std::size_t d, Rng& rng, double scale = 1.0) {
  LatentPoint w;
  for (std::size_t i = 0; i < d; ++i) w.values.push_back(scale * standard_normal(rng));
  return w;
}

}  // namespace latnav::testing
