#include "latnav/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "latnav/kernels.hpp"

namespace latnav::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                              shape_string(b));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a.shape(), b.shape());
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

// Elementwise unary op whose derivative is a function of (input, output).
template <class Forward, class Derivative>
Var unary(Graph& g, Var x, Forward forward, Derivative derivative) {
  const Tensor& in = g.value(x);
  Tensor out(matrix_shape(in.rows(), in.cols()));
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return g.record(std::move(out), {x}, [x, derivative](Graph& graph, std::size_t self) {
    Tensor* dx = graph.grad_buffer(x.id);
    if (dx == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    const Tensor& xv = graph.node_value(x.id);
    const Tensor& yv = graph.node_value(self);
    for (std::size_t i = 0; i < gy.size(); ++i) (*dx)[i] += gy[i] * derivative(xv[i], yv[i]);
  });
}

void log_softmax_row(std::span<const double> z, std::span<double> out) {
  const double lse = log_sum_exp(z);
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] - lse;
}

}  // namespace

// --- Graph -----------------------------------------------------------------

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var{nodes_.size() - 1};
}

Var Graph::constant_view(const Tensor& value) {
  nodes_.push_back(Node{{}, {}, false, {}, nullptr, &value});
  return Var{nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs_grad = false;
  for (Var in : inputs) {
    if (in.id >= nodes_.size()) throw std::out_of_range("record: input from another graph");
    needs_grad = needs_grad || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(inputs),
                        needs_grad ? std::move(backward) : nullptr});
  return Var{nodes_.size() - 1};
}

Tensor* Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  return node.requires_grad ? &node.grad : nullptr;
}

void Graph::backward(Var output) {
  if (output.id >= nodes_.size()) throw std::out_of_range("backward: unknown node");
  if (node_value(output.id).size() != 1) {
    throw std::invalid_argument("backward: output must be a scalar, got shape " +
                                shape_string(node_value(output.id).shape()));
  }
  for (Node& node : nodes_) {
    if (!node.requires_grad) continue;
    if (node.grad.shape() != node.value.shape()) {
      node.grad = Tensor(node.value.shape());
    } else {
      node.grad.fill(0.0);
    }
  }
  if (!nodes_[output.id].requires_grad) return;
  nodes_[output.id].grad[0] = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

// --- linear algebra --------------------------------------------------------

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.cols() != bv.rows()) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::matrix(m, n);
  kernels::active().gemm_nn(m, n, k, av.data(), bv.data(), out.data(), false);
  return g.record(std::move(out), {a, b}, [a, b, m, k, n](Graph& graph, std::size_t self) {
    const Tensor& gy = graph.node_grad(self);
    const auto& kt = kernels::active();
    if (Tensor* da = graph.grad_buffer(a.id)) {
      kt.gemm_nt(m, k, n, gy.data(), graph.node_value(b.id).data(), da->data(), true);
    }
    if (Tensor* db = graph.grad_buffer(b.id)) {
      kt.gemm_tn(k, n, m, graph.node_value(a.id).data(), gy.data(), db->data(), true);
    }
  });
}

Var add_row_bias(Graph& g, Var x, Var bias) {
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(bias);
  if (bv.size() != xv.cols()) shape_error("add_row_bias", xv.shape(), bv.shape());
  Tensor out = Tensor::matrix(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < xv.cols(); ++c) out.at(r, c) = xv.at(r, c) + bv[c];
  }
  return g.record(std::move(out), {x, bias}, [x, bias](Graph& graph, std::size_t self) {
    const Tensor& gy = graph.node_grad(self);
    if (Tensor* dx = graph.grad_buffer(x.id)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*dx)[i] += gy[i];
    }
    if (Tensor* db = graph.grad_buffer(bias.id)) {
      for (std::size_t r = 0; r < gy.rows(); ++r) {
        for (std::size_t c = 0; c < gy.cols(); ++c) (*db)[c] += gy.at(r, c);
      }
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  require_same_shape("add", g.value(a), g.value(b));
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  Tensor out(matrix_shape(av.rows(), av.cols()));
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& graph, std::size_t self) {
    const Tensor& gy = graph.node_grad(self);
    if (Tensor* da = graph.grad_buffer(a.id)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*da)[i] += gy[i];
    }
    if (Tensor* db = graph.grad_buffer(b.id)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*db)[i] += gy[i];
    }
  });
}

Var sub(Graph& g, Var a, Var b) {
  require_same_shape("sub", g.value(a), g.value(b));
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  Tensor out(matrix_shape(av.rows(), av.cols()));
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& graph, std::size_t self) {
    const Tensor& gy = graph.node_grad(self);
    if (Tensor* da = graph.grad_buffer(a.id)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*da)[i] += gy[i];
    }
    if (Tensor* db = graph.grad_buffer(b.id)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*db)[i] -= gy[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  require_same_shape("mul", g.value(a), g.value(b));
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  Tensor out(matrix_shape(av.rows(), av.cols()));
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& graph, std::size_t self) {
    const Tensor& gy = graph.node_grad(self);
    if (Tensor* da = graph.grad_buffer(a.id)) {
      const Tensor& bv = graph.node_value(b.id);
      for (std::size_t i = 0; i < gy.size(); ++i) (*da)[i] += gy[i] * bv[i];
    }
    if (Tensor* db = graph.grad_buffer(b.id)) {
      const Tensor& av = graph.node_value(a.id);
      for (std::size_t i = 0; i < gy.size(); ++i) (*db)[i] += gy[i] * av[i];
    }
  });
}

Var scale(Graph& g, Var a, double factor) {
  return unary(
      g, a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

// --- nonlinearities ----------------------------------------------------------

Var relu(Graph& g, Var x) {
  return unary(
      g, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Graph& g, Var x, double slope) {
  return unary(
      g, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(Graph& g, Var x) {
  return unary(
      g, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Graph& g, Var x) {
  return unary(
      g, x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var square(Graph& g, Var x) {
  return unary(
      g, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// --- structure ---------------------------------------------------------------

Var concat_cols(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.rows() != bv.rows()) shape_error("concat_cols", av.shape(), bv.shape());
  const std::size_t rows = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out = Tensor::matrix(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return g.record(std::move(out), {a, b}, [a, b, rows, ca, cb](Graph& graph, std::size_t self) {
    const Tensor& gy = graph.node_grad(self);
    Tensor* da = graph.grad_buffer(a.id);
    Tensor* db = graph.grad_buffer(b.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = gy.data() + r * (ca + cb);
      if (da != nullptr) {
        for (std::size_t c = 0; c < ca; ++c) da->data()[r * ca + c] += src[c];
      }
      if (db != nullptr) {
        for (std::size_t c = 0; c < cb; ++c) db->data()[r * cb + c] += src[ca + c];
      }
    }
  });
}

Var concat_rows(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = g.value(parts.front()).cols();
  std::vector<Tensor> values;
  std::vector<std::size_t> offsets;
  std::size_t rows = 0;
  for (Var p : parts) {
    const Tensor& v = g.value(p);
    if (v.cols() != cols) shape_error("concat_rows", g.value(parts.front()).shape(), v.shape());
    offsets.push_back(rows);
    rows += v.rows();
    values.push_back(v);
  }
  Tensor out = stack_rows(values);
  out = out.reshaped(matrix_shape(rows, cols));
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record(std::move(out), inputs, [inputs, offsets, cols](Graph& graph, std::size_t self) {
    const Tensor& gy = graph.node_grad(self);
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      Tensor* dp = graph.grad_buffer(inputs[p].id);
      if (dp == nullptr) continue;
      const double* src = gy.data() + offsets[p] * cols;
      for (std::size_t i = 0; i < dp->size(); ++i) (*dp)[i] += src[i];
    }
  });
}

Var slice_rows(Graph& g, Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = g.value(x);
  if (begin > end || end > xv.rows()) {
    throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + shape_string(xv.shape()));
  }
  const std::size_t cols = xv.cols();
  Tensor out = Tensor::matrix(end - begin, cols);
  std::copy_n(xv.data() + begin * cols, (end - begin) * cols, out.data());
  return g.record(std::move(out), {x}, [x, begin, cols](Graph& graph, std::size_t self) {
    Tensor* dx = graph.grad_buffer(x.id);
    if (dx == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    double* dst = dx->data() + begin * cols;
    for (std::size_t i = 0; i < gy.size(); ++i) dst[i] += gy[i];
  });
}

Var row_diff(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  if (xv.rows() < 2) throw std::invalid_argument("row_diff: need at least two rows, got " + shape_string(xv.shape()));
  const std::size_t rows = xv.rows() - 1, cols = xv.cols();
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r + 1, c) - xv.at(r, c);
  }
  return g.record(std::move(out), {x}, [x, rows, cols](Graph& graph, std::size_t self) {
    Tensor* dx = graph.grad_buffer(x.id);
    if (dx == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        dx->at(r + 1, c) += gy.at(r, c);
        dx->at(r, c) -= gy.at(r, c);
      }
    }
  });
}

// --- reductions ---------------------------------------------------------------

Var sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  double total = 0.0;
  for (double v : xv.values()) total += v;
  return g.record(Tensor::scalar(total), {x}, [x](Graph& graph, std::size_t self) {
    Tensor* dx = graph.grad_buffer(x.id);
    if (dx == nullptr) return;
    const double gy = graph.node_grad(self)[0];
    for (double& d : dx->values()) d += gy;
  });
}

Var mean(Graph& g, Var x) {
  const double n = static_cast<double>(g.value(x).size());
  return scale(g, sum(g, x), 1.0 / n);
}

Var row_sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out = Tensor::matrix(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double total = 0.0;
    for (double v : xv.row(r)) total += v;
    out[r] = total;
  }
  return g.record(std::move(out), {x}, [x](Graph& graph, std::size_t self) {
    Tensor* dx = graph.grad_buffer(x.id);
    if (dx == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    for (std::size_t r = 0; r < dx->rows(); ++r) {
      for (double& d : dx->row(r)) d += gy[r];
    }
  });
}

// --- probabilistic heads --------------------------------------------------------

Var softmax_rows(Graph& g, Var logits) {
  Tensor out = softmax(g.value(logits));
  return g.record(std::move(out), {logits}, [logits](Graph& graph, std::size_t self) {
    Tensor* dz = graph.grad_buffer(logits.id);
    if (dz == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    const Tensor& p = graph.node_value(self);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) inner += gy.at(r, c) * p.at(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) dz->at(r, c) += p.at(r, c) * (gy.at(r, c) - inner);
    }
  });
}

Var log_softmax_rows(Graph& g, Var logits) {
  const Tensor& z = g.value(logits);
  Tensor out = Tensor::matrix(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r) log_softmax_row(z.row(r), out.row(r));
  return g.record(std::move(out), {logits}, [logits](Graph& graph, std::size_t self) {
    Tensor* dz = graph.grad_buffer(logits.id);
    if (dz == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    const Tensor& lp = graph.node_value(self);
    for (std::size_t r = 0; r < lp.rows(); ++r) {
      double total = 0.0;
      for (double v : gy.row(r)) total += v;
      for (std::size_t c = 0; c < lp.cols(); ++c) dz->at(r, c) += gy.at(r, c) - std::exp(lp.at(r, c)) * total;
    }
  });
}

Var kl_to_uniform_rows(Graph& g, Var logits) {
  const Tensor& z = g.value(logits);
  const std::size_t rows = z.rows(), n = z.cols();
  if (n < 2) throw std::invalid_argument("kl_to_uniform_rows: need at least two outputs, got " + shape_string(z.shape()));
  Tensor out = Tensor::matrix(rows, 1);
  std::vector<double> lp(n);
  const double log_n = std::log(static_cast<double>(n));
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = z.row(r);
    if (std::all_of(row.begin(), row.end(), [&](double v) { return v == row.front(); })) {
      out[r] = 0.0;
      continue;
    }
    log_softmax_row(row, lp);
    double entropy_term = 0.0;
    for (double l : lp) entropy_term += std::exp(l) * l;
    out[r] = std::max(0.0, entropy_term + log_n);
  }
  return g.record(std::move(out), {logits}, [logits, rows, n](Graph& graph, std::size_t self) {
    Tensor* dz = graph.grad_buffer(logits.id);
    if (dz == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    const Tensor& zv = graph.node_value(logits.id);
    std::vector<double> lp(n);
    for (std::size_t r = 0; r < rows; ++r) {
      log_softmax_row(zv.row(r), lp);
      double expected = 0.0;
      for (double l : lp) expected += std::exp(l) * l;
      // d/dz_k sum_j p_j ln p_j = p_k (ln p_k - sum_j p_j ln p_j)
      for (std::size_t c = 0; c < n; ++c) dz->at(r, c) += gy[r] * std::exp(lp[c]) * (lp[c] - expected);
    }
  });
}

Var kl_to_uniform_probs(Graph& g, Var probs) {
  const Tensor& p = g.value(probs);
  Tensor out = Tensor::matrix(p.rows(), 1);
  for (std::size_t r = 0; r < p.rows(); ++r) out[r] = kl_to_uniform(p.row(r));
  return g.record(std::move(out), {probs}, [probs](Graph& graph, std::size_t self) {
    Tensor* dp = graph.grad_buffer(probs.id);
    if (dp == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    const Tensor& pv = graph.node_value(probs.id);
    const double n = static_cast<double>(pv.cols());
    for (std::size_t r = 0; r < pv.rows(); ++r) {
      for (std::size_t c = 0; c < pv.cols(); ++c) {
        const double pc = pv.at(r, c);
        if (pc <= 0.0) throw std::domain_error("kl_to_uniform_probs: gradient undefined at p = 0");
        dp->at(r, c) += gy[r] * (std::log(pc * n) + 1.0);
      }
    }
  });
}

Var cross_entropy_rows(Graph& g, Var logits, std::span<const int> targets) {
  const Tensor& z = g.value(logits);
  if (targets.size() != z.rows()) {
    throw std::invalid_argument("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits " +
                                shape_string(z.shape()));
  }
  Tensor out = Tensor::matrix(z.rows(), 1);
  for (std::size_t r = 0; r < z.rows(); ++r) out[r] = cross_entropy(z.row(r), targets[r]);
  std::vector<int> labels(targets.begin(), targets.end());
  return g.record(std::move(out), {logits}, [logits, labels](Graph& graph, std::size_t self) {
    Tensor* dz = graph.grad_buffer(logits.id);
    if (dz == nullptr) return;
    const Tensor& gy = graph.node_grad(self);
    const Tensor& zv = graph.node_value(logits.id);
    std::vector<double> lp(zv.cols());
    for (std::size_t r = 0; r < zv.rows(); ++r) {
      log_softmax_row(zv.row(r), lp);
      for (std::size_t c = 0; c < zv.cols(); ++c) {
        const double indicator = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
        dz->at(r, c) += gy[r] * (std::exp(lp[c]) - indicator);
      }
    }
  });
}

// --- numeric versions -------------------------------------------------------------

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += std::exp(v - top);
  return top + std::log(total);
}

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    auto p = out.row(r);
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] = std::exp(z[c] - top);
      total += p[c];
    }
    for (double& v : p) v /= total;
  }
  return out;
}

double kl_to_uniform(std::span<const double> probs) {
  if (std::all_of(probs.begin(), probs.end(), [&](double p) { return p == probs.front(); })) return 0.0;
  const double n = static_cast<double>(probs.size());
  double total = 0.0;
  for (double p : probs) {
    if (p > 0.0) total += p * std::log(p * n);
  }
  // Non-negative in exact arithmetic; drop round-off below zero.
  return std::max(0.0, total);
}

double cross_entropy(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw std::invalid_argument("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                                std::to_string(logits.size()) + ")");
  }
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(target)];
}

}  // namespace latnav::ad
