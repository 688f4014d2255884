#pragma once

// Taped reverse-mode differentiation over small dense graphs.
//
// Nodes are appended in evaluation order, so every input id is smaller than
// the id of its consumer and a single descending sweep is a valid reverse
// topological order. Values are computed eagerly when a node is appended.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advamd/error.hpp"
#include "advamd/tensor.hpp"

namespace advamd {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Mul,
  Relu,
  SoftmaxCrossEntropy,
  Reshape,
  Sum,
  Scale,
  Linear,
  BatchNormTrain,
  BatchNormEval,
};

// Non-tensor arguments for ops that need them.
struct OpAttrs {
  std::vector<std::size_t> labels;  // SoftmaxCrossEntropy
  std::vector<double> weights;      // SoftmaxCrossEntropy per-row weights (empty = all 1)
  double factor = 1.0;              // Scale factor; BatchNorm epsilon
  Shape shape;                      // Reshape target
  std::vector<double> mean;         // BatchNormEval statistics
  std::vector<double> var;
};

class Graph {
 public:
  using Adjoints = std::vector<std::vector<double>>;
  using GradRule = std::function<void(const Graph&, const std::vector<double>& out_adj, Adjoints&)>;

  Graph() = default;

  // Binds an externally owned tensor. Gradients are accumulated into
  // `external.grad` when `external.requires_grad` is set. The tensor must
  // outlive the graph.
  NodeId leaf(Tensor& external) {
    Node n;
    n.kind = OpKind::Leaf;
    n.external = &external;
    n.needs_grad = external.requires_grad;
    return push(std::move(n));
  }

  // Binds an externally owned tensor read-only; it never receives gradient.
  NodeId leaf_const(const Tensor& external) {
    Node n;
    n.kind = OpKind::Leaf;
    n.external = const_cast<Tensor*>(&external);
    n.read_only = true;
    return push(std::move(n));
  }

  // Owned leaf that never receives gradient.
  NodeId constant(Tensor value) {
    value.requires_grad = false;
    Node n;
    n.kind = OpKind::Leaf;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  // Owned leaf that receives gradient.
  NodeId variable(Tensor value) {
    value.requires_grad = true;
    Node n;
    n.kind = OpKind::Leaf;
    n.owned = std::move(value);
    n.needs_grad = true;
    return push(std::move(n));
  }

  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(NodeId id) const { return node(id).tensor(); }
  Tensor& tensor(NodeId id) { return node(id).tensor(); }
  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }
  // Side outputs of an op (batch mean followed by batch variance for BatchNormTrain).
  const std::vector<double>& side(NodeId id) const { return node(id).side; }

  // Generic dispatch for every op kind.
  NodeId forward_op(OpKind kind, std::span<const NodeId> in, const OpAttrs& attrs = {}) {
    auto arity = [&](std::size_t n) {
      require(in.size() == n, ErrorCode::InvalidArgument, "wrong number of inputs");
    };
    switch (kind) {
      case OpKind::MatMul: arity(2); return matmul(in[0], in[1]);
      case OpKind::Add: arity(2); return add(in[0], in[1]);
      case OpKind::Mul: arity(2); return mul(in[0], in[1]);
      case OpKind::Relu: arity(1); return relu(in[0]);
      case OpKind::SoftmaxCrossEntropy:
        arity(1);
        return softmax_cross_entropy(in[0], attrs.labels, attrs.weights);
      case OpKind::Reshape: arity(1); return reshape(in[0], attrs.shape);
      case OpKind::Sum: arity(1); return sum(in[0]);
      case OpKind::Scale: arity(1); return scale(in[0], attrs.factor);
      case OpKind::Linear: arity(3); return linear(in[0], in[1], in[2]);
      case OpKind::BatchNormTrain: arity(3); return batch_norm_train(in[0], in[1], in[2], attrs.factor);
      case OpKind::BatchNormEval:
        arity(3);
        return batch_norm_eval(in[0], in[1], in[2], attrs.mean, attrs.var, attrs.factor);
      case OpKind::Leaf: break;
    }
    fail(ErrorCode::InvalidArgument, "forward_op cannot create leaves");
  }

  // [m x k] * [k x n]
  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[0], ErrorCode::ShapeMismatch,
            "matmul " + shape_str(A.shape) + " * " + shape_str(B.shape));
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.values[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * B.values[p * n + j];
      }
    return push_op(OpKind::MatMul, {a, b}, Tensor({m, n}, std::move(out)),
                   [a, b, m, k, n](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     const auto& Av = g.value(a).values;
                     const auto& Bv = g.value(b).values;
                     if (g.needs_grad(a)) {
                       auto& da = slot(adj, a, m * k);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < n; ++j) s += dy[i * n + j] * Bv[p * n + j];
                           da[i * k + p] += s;
                         }
                     }
                     if (g.needs_grad(b)) {
                       auto& db = slot(adj, b, k * n);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = Av[i * k + p];
                           for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * dy[i * n + j];
                         }
                     }
                   });
  }

  // Elementwise sum. `b` may also be a rank-1 row broadcast over the rows of
  // a rank-2 `a`.
  NodeId add(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape == B.shape) {
      std::vector<double> out(A.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.values[i] + B.values[i];
      const std::size_t n = out.size();
      return push_op(OpKind::Add, {a, b}, Tensor(A.shape, std::move(out)),
                     [a, b, n](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                       if (g.needs_grad(a)) {
                         auto& da = slot(adj, a, n);
                         for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
                       }
                       if (g.needs_grad(b)) {
                         auto& db = slot(adj, b, n);
                         for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
                       }
                     });
    }
    require(A.rank() == 2 && B.rank() == 1 && B.shape[0] == A.shape[1], ErrorCode::ShapeMismatch,
            "add " + shape_str(A.shape) + " + " + shape_str(B.shape));
    const std::size_t rows = A.shape[0], cols = A.shape[1];
    std::vector<double> out(A.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = A.values[r * cols + c] + B.values[c];
    return push_op(OpKind::Add, {a, b}, Tensor(A.shape, std::move(out)),
                   [a, b, rows, cols](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     if (g.needs_grad(a)) {
                       auto& da = slot(adj, a, rows * cols);
                       for (std::size_t i = 0; i < rows * cols; ++i) da[i] += dy[i];
                     }
                     if (g.needs_grad(b)) {
                       auto& db = slot(adj, b, cols);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
                     }
                   });
  }

  NodeId mul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.shape == B.shape, ErrorCode::ShapeMismatch,
            "mul " + shape_str(A.shape) + " * " + shape_str(B.shape));
    const std::size_t n = A.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = A.values[i] * B.values[i];
    return push_op(OpKind::Mul, {a, b}, Tensor(A.shape, std::move(out)),
                   [a, b, n](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     const auto& Av = g.value(a).values;
                     const auto& Bv = g.value(b).values;
                     if (g.needs_grad(a)) {
                       auto& da = slot(adj, a, n);
                       for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * Bv[i];
                     }
                     if (g.needs_grad(b)) {
                       auto& db = slot(adj, b, n);
                       for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * Av[i];
                     }
                   });
  }

  // Subgradient at 0 is 0.
  NodeId relu(NodeId a) {
    const Tensor& A = value(a);
    const std::size_t n = A.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = A.values[i] > 0.0 ? A.values[i] : 0.0;
    return push_op(OpKind::Relu, {a}, Tensor(A.shape, std::move(out)),
                   [a, n](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     if (!g.needs_grad(a)) return;
                     const auto& Av = g.value(a).values;
                     auto& da = slot(adj, a, n);
                     for (std::size_t i = 0; i < n; ++i)
                       if (Av[i] > 0.0) da[i] += dy[i];
                   });
  }

  // Fused log-softmax + negative log-likelihood, averaged over rows:
  //   loss = (1/B) * sum_b w_b * (logsumexp(z_b) - z_b[label_b])
  // A rank-1 input is treated as a single row.
  NodeId softmax_cross_entropy(NodeId logits, const std::vector<std::size_t>& labels,
                               const std::vector<double>& weights = {}) {
    const Tensor& Z = value(logits);
    require(Z.rank() == 1 || Z.rank() == 2, ErrorCode::ShapeMismatch, "logits must be rank 1 or 2");
    const std::size_t rows = Z.rank() == 1 ? 1 : Z.shape[0];
    const std::size_t cols = Z.rank() == 1 ? Z.shape[0] : Z.shape[1];
    require(labels.size() == rows, ErrorCode::ShapeMismatch, "one label per logits row required");
    require(weights.empty() || weights.size() == rows, ErrorCode::ShapeMismatch,
            "one weight per logits row required");
    std::vector<double> probs(rows * cols);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      require(labels[r] < cols, ErrorCode::InvalidArgument, "label out of range");
      const double* z = &Z.values[r * cols];
      const double zmax = *std::max_element(z, z + cols);
      double denom = 0.0;
      for (std::size_t c = 0; c < cols; ++c) denom += std::exp(z[c] - zmax);
      const double log_denom = std::log(denom);
      for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(z[c] - zmax - log_denom);
      const double w = weights.empty() ? 1.0 : weights[r];
      total += w * (log_denom - (z[labels[r]] - zmax));
    }
    const double inv_rows = 1.0 / static_cast<double>(rows);
    return push_op(OpKind::SoftmaxCrossEntropy, {logits}, Tensor::scalar(total * inv_rows),
                   [logits, labels, weights, rows, cols, inv_rows, probs = std::move(probs)](
                       const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     if (!g.needs_grad(logits)) return;
                     auto& dz = slot(adj, logits, rows * cols);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double w = (weights.empty() ? 1.0 : weights[r]) * inv_rows * dy[0];
                       for (std::size_t c = 0; c < cols; ++c) {
                         const double target = c == labels[r] ? 1.0 : 0.0;
                         dz[r * cols + c] += w * (probs[r * cols + c] - target);
                       }
                     }
                   });
  }

  NodeId reshape(NodeId a, const Shape& shape) {
    const Tensor& A = value(a);
    require(shape_size(shape) == A.size(), ErrorCode::ShapeMismatch,
            "reshape " + shape_str(A.shape) + " to " + shape_str(shape));
    const std::size_t n = A.size();
    return push_op(OpKind::Reshape, {a}, Tensor(shape, A.values),
                   [a, n](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     if (!g.needs_grad(a)) return;
                     auto& da = slot(adj, a, n);
                     for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
                   });
  }

  NodeId sum(NodeId a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double v : A.values) s += v;
    const std::size_t n = A.size();
    return push_op(OpKind::Sum, {a}, Tensor::scalar(s),
                   [a, n](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     if (!g.needs_grad(a)) return;
                     auto& da = slot(adj, a, n);
                     for (std::size_t i = 0; i < n; ++i) da[i] += dy[0];
                   });
  }

  NodeId scale(NodeId a, double factor) {
    const Tensor& A = value(a);
    const std::size_t n = A.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = factor * A.values[i];
    return push_op(OpKind::Scale, {a}, Tensor(A.shape, std::move(out)),
                   [a, n, factor](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     if (!g.needs_grad(a)) return;
                     auto& da = slot(adj, a, n);
                     for (std::size_t i = 0; i < n; ++i) da[i] += factor * dy[i];
                   });
  }

  // x [B x in], weight [out x in], bias [out]  ->  x * weight^T + bias
  NodeId linear(NodeId x, NodeId weight, NodeId bias) {
    const Tensor& X = value(x);
    const Tensor& W = value(weight);
    const Tensor& b = value(bias);
    require(X.rank() == 2 && W.rank() == 2 && b.rank() == 1, ErrorCode::ShapeMismatch,
            "linear expects x[B x in], W[out x in], b[out]");
    const std::size_t rows = X.shape[0], in = X.shape[1], out = W.shape[0];
    require(W.shape[1] == in, ErrorCode::WidthMismatch,
            "linear input width " + std::to_string(in) + " vs weight " + shape_str(W.shape));
    require(b.shape[0] == out, ErrorCode::ShapeMismatch, "bias width mismatch");
    std::vector<double> y(rows * out);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out; ++o) {
        double s = b.values[o];
        for (std::size_t i = 0; i < in; ++i) s += X.values[r * in + i] * W.values[o * in + i];
        y[r * out + o] = s;
      }
    return push_op(
        OpKind::Linear, {x, weight, bias}, Tensor({rows, out}, std::move(y)),
        [x, weight, bias, rows, in, out](const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
          const auto& Xv = g.value(x).values;
          const auto& Wv = g.value(weight).values;
          if (g.needs_grad(x)) {
            auto& dx = slot(adj, x, rows * in);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < out; ++o) {
                const double d = dy[r * out + o];
                for (std::size_t i = 0; i < in; ++i) dx[r * in + i] += d * Wv[o * in + i];
              }
          }
          if (g.needs_grad(weight)) {
            auto& dw = slot(adj, weight, out * in);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < out; ++o) {
                const double d = dy[r * out + o];
                for (std::size_t i = 0; i < in; ++i) dw[o * in + i] += d * Xv[r * in + i];
              }
          }
          if (g.needs_grad(bias)) {
            auto& db = slot(adj, bias, out);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < out; ++o) db[o] += dy[r * out + o];
          }
        });
  }

  // Batch normalization with batch statistics (population variance):
  //   y = gamma * (x - mean) / sqrt(var + eps) + beta
  // side(id) holds the batch mean followed by the batch variance.
  NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta, double eps) {
    const Tensor& X = value(x);
    const std::size_t rows = X.rows(), cols = X.cols();
    check_bn_shapes(X, value(gamma), value(beta));
    require(rows >= 2, ErrorCode::BatchTooSmall, "train-mode batch norm needs at least 2 rows");
    std::vector<double> mean(cols, 0.0), var(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += X.values[r * cols + c];
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = X.values[r * cols + c] - mean[c];
        var[c] += d * d;
      }
    for (double& v : var) v /= static_cast<double>(rows);
    std::vector<double> inv_std(cols), xhat(rows * cols), y(rows * cols);
    const auto& G = value(gamma).values;
    const auto& Bt = value(beta).values;
    for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        xhat[i] = (X.values[i] - mean[c]) * inv_std[c];
        y[i] = G[c] * xhat[i] + Bt[c];
      }
    std::vector<double> side = mean;
    side.insert(side.end(), var.begin(), var.end());
    NodeId id = push_op(
        OpKind::BatchNormTrain, {x, gamma, beta}, Tensor(X.shape, std::move(y)),
        [x, gamma, beta, rows, cols, inv_std = std::move(inv_std), xhat = std::move(xhat)](
            const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
          const auto& Gv = g.value(gamma).values;
          std::vector<double> sum_dy(cols, 0.0), sum_dy_xhat(cols, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              sum_dy[c] += dy[r * cols + c];
              sum_dy_xhat[c] += dy[r * cols + c] * xhat[r * cols + c];
            }
          if (g.needs_grad(x)) {
            auto& dx = slot(adj, x, rows * cols);
            const double n = static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                dx[i] += Gv[c] * inv_std[c] / n *
                         (n * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
              }
          }
          if (g.needs_grad(gamma)) {
            auto& dg = slot(adj, gamma, cols);
            for (std::size_t c = 0; c < cols; ++c) dg[c] += sum_dy_xhat[c];
          }
          if (g.needs_grad(beta)) {
            auto& db = slot(adj, beta, cols);
            for (std::size_t c = 0; c < cols; ++c) db[c] += sum_dy[c];
          }
        });
    nodes_[id].side = std::move(side);
    return id;
  }

  // Batch normalization with fixed statistics; an affine map of x.
  NodeId batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, const std::vector<double>& mean,
                         const std::vector<double>& var, double eps) {
    const Tensor& X = value(x);
    const std::size_t rows = X.rows(), cols = X.cols();
    check_bn_shapes(X, value(gamma), value(beta));
    require(mean.size() == cols && var.size() == cols, ErrorCode::WidthMismatch,
            "running statistics width mismatch");
    std::vector<double> inv_std(cols), xhat(rows * cols), y(rows * cols);
    const auto& G = value(gamma).values;
    const auto& Bt = value(beta).values;
    for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        xhat[i] = (X.values[i] - mean[c]) * inv_std[c];
        y[i] = G[c] * xhat[i] + Bt[c];
      }
    return push_op(OpKind::BatchNormEval, {x, gamma, beta}, Tensor(X.shape, std::move(y)),
                   [x, gamma, beta, rows, cols, inv_std = std::move(inv_std), xhat = std::move(xhat)](
                       const Graph& g, const std::vector<double>& dy, Adjoints& adj) {
                     const auto& Gv = g.value(gamma).values;
                     if (g.needs_grad(x)) {
                       auto& dx = slot(adj, x, rows * cols);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c)
                           dx[r * cols + c] += dy[r * cols + c] * Gv[c] * inv_std[c];
                     }
                     if (g.needs_grad(gamma)) {
                       auto& dg = slot(adj, gamma, cols);
                       for (std::size_t i = 0; i < rows * cols; ++i) dg[i % cols] += dy[i] * xhat[i];
                     }
                     if (g.needs_grad(beta)) {
                       auto& db = slot(adj, beta, cols);
                       for (std::size_t i = 0; i < rows * cols; ++i) db[i % cols] += dy[i];
                     }
                   });
  }

  // Accumulates d(loss)/d(t) into t.grad for every requires_grad tensor the
  // loss depends on. Repeated calls keep accumulating.
  void backward(NodeId loss) {
    require(loss < nodes_.size(), ErrorCode::UnknownNode, "loss node out of range");
    require(value(loss).size() == 1, ErrorCode::NonScalarLoss,
            "backward needs a scalar loss, got " + shape_str(value(loss).shape));
    Adjoints adj(loss + 1);
    adj[loss] = {1.0};
    for (NodeId id = loss + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (adj[id].empty() || !n.needs_grad) continue;
      if (n.rule) n.rule(*this, adj[id], adj);
    }
    for (NodeId id = 0; id <= loss; ++id) {
      if (adj[id].empty()) continue;
      if (nodes_[id].read_only) continue;
      Tensor& t = nodes_[id].tensor();
      if (!t.requires_grad) continue;
      for (std::size_t i = 0; i < t.grad.size(); ++i) t.grad[i] += adj[id][i];
    }
  }

  // Clears gradients of every owned and bound tensor reachable in the graph.
  void zero_grad() {
    for (Node& n : nodes_)
      if (!n.read_only) n.tensor().zero_grad();
  }

  bool needs_grad(NodeId id) const { return node(id).needs_grad; }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor owned;
    Tensor* external = nullptr;
    bool read_only = false;
    bool needs_grad = false;
    GradRule rule;
    std::vector<double> side;

    Tensor& tensor() { return external ? *external : owned; }
    const Tensor& tensor() const { return external ? *external : owned; }
  };

  static std::vector<double>& slot(Adjoints& adj, NodeId id, std::size_t n) {
    auto& s = adj[id];
    if (s.empty()) s.assign(n, 0.0);
    return s;
  }

  static void check_bn_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    require(x.rank() == 2, ErrorCode::ShapeMismatch, "batch norm expects [B x F]");
    require(gamma.size() == x.cols() && beta.size() == x.cols(), ErrorCode::WidthMismatch,
            "batch norm width " + std::to_string(gamma.size()) + " vs input " +
                std::to_string(x.cols()));
  }

  const Node& node(NodeId id) const {
    require(id < nodes_.size(), ErrorCode::UnknownNode, "node id " + std::to_string(id));
    return nodes_[id];
  }
  Node& node(NodeId id) {
    require(id < nodes_.size(), ErrorCode::UnknownNode, "node id " + std::to_string(id));
    return nodes_[id];
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push_op(OpKind kind, std::vector<NodeId> inputs, Tensor out, GradRule rule) {
    Node n;
    n.kind = kind;
    n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](NodeId i) { return needs_grad(i); });
    n.inputs = std::move(inputs);
    n.owned = std::move(out);
    if (n.needs_grad) n.rule = std::move(rule);
    return push(std::move(n));
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference checking

inline constexpr double kRelativeErrorFloor = 1e-8;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

// Builds a scalar-valued graph from an input node.
using GraphBuilder = std::function<NodeId(Graph&, NodeId input)>;

// Max over coordinates of the relative error between the taped gradient of
// `function` at `point` and the central difference with step h.
inline double grad_check(const GraphBuilder& function, const Tensor& point, double h) {
  require(h > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be positive");
  auto evaluate = [&](const Tensor& at) {
    Graph g;
    const NodeId in = g.constant(at);
    const NodeId out = function(g, in);
    require(g.value(out).size() == 1, ErrorCode::NonScalarLoss, "grad_check function must be scalar");
    return g.value(out).item();
  };
  const double f0 = evaluate(point);
  const double f1 = evaluate(point);
  require(f0 == f1 || (std::isnan(f0) && std::isnan(f1)), ErrorCode::NonDeterministicFunction,
          "two evaluations at the same point differ");

  Graph g;
  const NodeId in = g.variable(point);
  g.backward(function(g, in));
  const std::vector<double> analytic = g.value(in).grad;

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe.values[i] = point.values[i] + h;
    const double up = evaluate(probe);
    probe.values[i] = point.values[i] - h;
    const double down = evaluate(probe);
    probe.values[i] = point.values[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

// Same contract for a set of externally owned parameter tensors bound inside
// `loss` (via Graph::leaf). Parameter values are restored on return and their
// gradient buffers are left holding the analytic gradient.
inline double grad_check_parameters(const std::function<NodeId(Graph&)>& loss,
                                    std::span<Tensor* const> params, double h) {
  require(h > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be positive");
  auto evaluate = [&] {
    Graph g;
    return g.value(loss(g)).item();
  };
  const double f0 = evaluate();
  const double f1 = evaluate();
  require(f0 == f1 || (std::isnan(f0) && std::isnan(f1)), ErrorCode::NonDeterministicFunction,
          "two evaluations at the same point differ");

  for (Tensor* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  double worst = 0.0;
  for (Tensor* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->values[i];
      p->values[i] = saved + h;
      const double up = evaluate();
      p->values[i] = saved - h;
      const double down = evaluate();
      p->values[i] = saved;
      worst = std::max(worst, relative_error(p->grad[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace advamd
