#include "latnav/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace latnav {

std::size_t Mlp::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.weight.size() + layer.bias.size();
  return total;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

Mlp make_mlp(std::span<const std::size_t> sizes, Activation activation, Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output sizes");
  Mlp net;
  net.activation = activation;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double gain = activation == Activation::tanh ? 1.0 : 2.0;
    const double stddev = std::sqrt(gain / static_cast<double>(in));
    DenseLayer layer{Tensor::matrix(in, out), Tensor::matrix(1, out)};
    for (double& w : layer.weight.values()) w = stddev * standard_normal(rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

BoundMlp bind_mlp(ad::Graph& g, const Mlp& net, bool trainable) {
  BoundMlp bound;
  bound.activation = net.activation;
  for (const auto& layer : net.layers) {
    if (trainable) {
      bound.weights.push_back(g.variable(layer.weight));
      bound.biases.push_back(g.variable(layer.bias));
    } else {
      bound.weights.push_back(g.constant_view(layer.weight));
      bound.biases.push_back(g.constant_view(layer.bias));
    }
  }
  return bound;
}

MlpOutput mlp_forward(ad::Graph& g, const BoundMlp& net, ad::Var input) {
  if (net.weights.empty()) throw std::invalid_argument("mlp_forward: network has no layers");
  ad::Var h = input;
  ad::Var penultimate = input;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Tensor& w = g.value(net.weights[l]);
    const Tensor& x = g.value(h);
    if (x.cols() != w.rows()) {
      throw std::invalid_argument("mlp_forward: layer " + std::to_string(l) + " expects " +
                                  std::to_string(w.rows()) + " inputs but received " + shape_string(x.shape()));
    }
    h = ad::add_row_bias(g, ad::matmul(g, h, net.weights[l]), net.biases[l]);
    if (l + 1 < net.weights.size()) {
      switch (net.activation) {
        case Activation::relu:
          h = ad::relu(g, h);
          break;
        case Activation::tanh:
          h = ad::tanh(g, h);
          break;
        case Activation::leaky_relu:
          h = ad::leaky_relu(g, h, kLeakySlope);
          break;
      }
      penultimate = h;
    }
  }
  return MlpOutput{h, penultimate};
}

std::vector<const Tensor*> mlp_gradients(const ad::Graph& g, const BoundMlp& net) {
  std::vector<const Tensor*> out;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    out.push_back(&g.grad(net.weights[l]));
    out.push_back(&g.grad(net.biases[l]));
  }
  return out;
}

Tensor mlp_logits(const Mlp& net, const Tensor& inputs) {
  ad::Graph g;
  const BoundMlp bound = bind_mlp(g, net, false);
  return g.value(mlp_forward(g, bound, g.constant_view(inputs)).logits);
}

Tensor mlp_penultimate(const Mlp& net, const Tensor& inputs) {
  ad::Graph g;
  const BoundMlp bound = bind_mlp(g, net, false);
  return g.value(mlp_forward(g, bound, g.constant_view(inputs)).penultimate);
}

}  // namespace latnav
