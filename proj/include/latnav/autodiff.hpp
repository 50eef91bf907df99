#pragma once

// Define-by-run reverse-mode differentiation over 2-D tensors.
//
// A Graph is an append-only tape: node i may only read nodes < i, so the
// insertion order is a topological order and backward() simply walks the
// tape in reverse. Graphs are rebuilt for every forward pass.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "latnav/tensor.hpp"

namespace latnav::ad {

class Graph;

// Handle to a node of one particular Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Graph {
 public:
  // Receives the node's own gradient and must add into the inputs' grads
  // through Graph::grad_buffer (nullptr for inputs that need no gradient).
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Var constant(Tensor value);
  // Non-owning constant; `value` must outlive the graph.
  Var constant_view(const Tensor& value);
  Var variable(Tensor value);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return node_value(v.id); }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Zeroes every gradient buffer, seeds d(output)/d(output) = 1 and
  // propagates in reverse insertion order. `output` must hold one element.
  void backward(Var output);

  // Gradient accumulator for node `id`, or nullptr when it needs none.
  Tensor* grad_buffer(std::size_t id);
  const Tensor& node_grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& node_value(std::size_t id) const {
    const Node& node = nodes_.at(id);
    return node.external != nullptr ? *node.external : node.value;
  }
  const std::vector<Var>& node_inputs(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
    const Tensor* external = nullptr;
  };
  std::vector<Node> nodes_;
};

// --- linear algebra -------------------------------------------------------
Var matmul(Graph& g, Var a, Var b);               // (m x k)(k x n)
Var add_row_bias(Graph& g, Var x, Var bias);      // x(m x n) + bias(1 x n)
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);                  // elementwise
Var scale(Graph& g, Var a, double factor);

// --- elementwise nonlinearities -------------------------------------------
Var relu(Graph& g, Var x);
Var leaky_relu(Graph& g, Var x, double slope);
Var tanh(Graph& g, Var x);
Var softplus(Graph& g, Var x);                    // log(1 + e^x), stable
Var square(Graph& g, Var x);

// --- structure --------------------------------------------------------------
Var concat_cols(Graph& g, Var a, Var b);
Var concat_rows(Graph& g, std::span<const Var> parts);
Var slice_rows(Graph& g, Var x, std::size_t begin, std::size_t end);
Var row_diff(Graph& g, Var x);                    // row i+1 minus row i

// --- reductions -------------------------------------------------------------
Var sum(Graph& g, Var x);                         // -> 1 x 1
Var mean(Graph& g, Var x);                        // -> 1 x 1
Var row_sum(Graph& g, Var x);                     // -> rows x 1

// --- probabilistic heads (row-wise, logits in) ------------------------------
Var softmax_rows(Graph& g, Var logits);
Var log_softmax_rows(Graph& g, Var logits);
// KL(softmax(logits) || uniform) per row -> rows x 1.
Var kl_to_uniform_rows(Graph& g, Var logits);
// KL(p || uniform) per row for rows that already lie on the simplex.
Var kl_to_uniform_probs(Graph& g, Var probs);
// -log softmax(logits)[target] per row -> rows x 1.
Var cross_entropy_rows(Graph& g, Var logits, std::span<const int> targets);

// --- plain numeric versions -------------------------------------------------
// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);
// Sum_i p_i ln(p_i n) with 0 ln 0 := 0.
double kl_to_uniform(std::span<const double> probs);
double cross_entropy(std::span<const double> logits, int target);
// log-sum-exp of one row.
double log_sum_exp(std::span<const double> values);

}  // namespace latnav::ad
