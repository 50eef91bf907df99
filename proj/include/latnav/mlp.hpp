#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latnav/autodiff.hpp"
#include "latnav/random.hpp"
#include "latnav/tensor.hpp"

namespace latnav {

enum class Activation { relu, tanh, leaky_relu };

inline constexpr double kLeakySlope = 0.2;

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Fully connected network; `activation` is applied between layers, never
// after the last one.
struct Mlp {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::relu;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }
  std::size_t parameter_count() const;
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

// He-style initialisation, zero biases. sizes = {in, hidden..., out}.
Mlp make_mlp(std::span<const std::size_t> sizes, Activation activation, Rng& rng);

// Parameters of an Mlp placed on a graph, as constants or trainable leaves.
struct BoundMlp {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  Activation activation = Activation::relu;
};

BoundMlp bind_mlp(ad::Graph& g, const Mlp& net, bool trainable);

struct MlpOutput {
  ad::Var logits;       // final pre-softmax activations
  ad::Var penultimate;  // input of the last layer
};

MlpOutput mlp_forward(ad::Graph& g, const BoundMlp& net, ad::Var input);

// Gradients of a trainable binding after g.backward(), ordered like
// Mlp::parameters().
std::vector<const Tensor*> mlp_gradients(const ad::Graph& g, const BoundMlp& net);

// Graph-free evaluation helpers.
Tensor mlp_logits(const Mlp& net, const Tensor& inputs);
Tensor mlp_penultimate(const Mlp& net, const Tensor& inputs);

}  // namespace latnav
