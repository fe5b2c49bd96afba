#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "biozsl/errors.hpp"
#include "biozsl/params.hpp"
#include "biozsl/tensor.hpp"

namespace biozsl {

// Reverse-mode tape over dense tensors. A Graph is built per forward pass;
// backward() walks the tape in reverse and accumulates gradients, routing leaf
// gradients into their bound Parameters.
class Graph {
 public:
  using NodeId = std::size_t;

  NodeId constant(Tensor t) { return push(std::move(t), "constant"); }

  NodeId param(Parameter& p) {
    const NodeId id = push(p.value, "param");
    Parameter* bound = &p;
    nodes_[id].back = [this, id, bound] {
      const Tensor& g = nodes_[id].grad;
      for (std::size_t i = 0; i < g.values.size(); ++i) bound->grad.values[i] += g.values[i];
    };
    return id;
  }

  const Tensor& value(NodeId id) const { return nodes_[id].val; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }

  // y = x * W^T + b with W stored as [out x in], x as [batch x in].
  NodeId affine(NodeId w, NodeId b, NodeId x) {
    const Tensor& wv = nodes_[w].val;
    const Tensor& bv = nodes_[b].val;
    const Tensor& xv = nodes_[x].val;
    if (wv.rank() != 2 || xv.rank() != 2 || bv.rank() != 1) {
      throw ShapeError("affine: expected W[out x in] " + shape_str(wv) + ", b[out] " + shape_str(bv) +
                       ", x[batch x in] " + shape_str(xv));
    }
    const std::size_t out = wv.shape[0], in = wv.shape[1], batch = xv.shape[0];
    if (xv.shape[1] != in || bv.shape[0] != out) {
      throw ShapeError("affine: shape mismatch W" + shape_str(wv) + " b" + shape_str(bv) + " x" + shape_str(xv));
    }
    Tensor y = Tensor::zeros({batch, out});
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = bv.values[o];
        const double* xr = &xv.values[r * in];
        const double* wo = &wv.values[o * in];
        for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
        y.values[r * out + o] = acc;
      }
    }
    const NodeId id = push(std::move(y), "affine");
    nodes_[id].back = [this, id, w, b, x, batch, in, out] {
      const Tensor& gy = nodes_[id].grad;
      Tensor& gw = nodes_[w].grad;
      Tensor& gb = nodes_[b].grad;
      Tensor& gx = nodes_[x].grad;
      const Tensor& wv = nodes_[w].val;
      const Tensor& xv = nodes_[x].val;
      for (std::size_t r = 0; r < batch; ++r) {
        const double* gyr = &gy.values[r * out];
        const double* xr = &xv.values[r * in];
        double* gxr = &gx.values[r * in];
        for (std::size_t o = 0; o < out; ++o) {
          const double g = gyr[o];
          gb.values[o] += g;
          double* gwo = &gw.values[o * in];
          const double* wo = &wv.values[o * in];
          for (std::size_t i = 0; i < in; ++i) {
            gwo[i] += g * xr[i];
            gxr[i] += g * wo[i];
          }
        }
      }
    };
    return id;
  }

  // Elementwise max(0, x). Subgradient at exactly 0 is 0.
  NodeId relu(NodeId x) {
    Tensor y = nodes_[x].val;
    for (double& v : y.values) v = v > 0.0 ? v : 0.0;
    const NodeId id = push(std::move(y), "relu");
    nodes_[id].back = [this, id, x] {
      const Tensor& gy = nodes_[id].grad;
      const Tensor& xv = nodes_[x].val;
      Tensor& gx = nodes_[x].grad;
      for (std::size_t i = 0; i < gy.values.size(); ++i) {
        if (xv.values[i] > 0.0) gx.values[i] += gy.values[i];
      }
    };
    return id;
  }

  NodeId add(NodeId a, NodeId b) { return binary_elementwise(a, b, "add", +1.0); }
  NodeId sub(NodeId a, NodeId b) { return binary_elementwise(a, b, "sub", -1.0); }

  NodeId mul(NodeId a, NodeId b) {
    require_same_shape(nodes_[a].val, nodes_[b].val, "mul");
    Tensor y = nodes_[a].val;
    for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] *= nodes_[b].val.values[i];
    const NodeId id = push(std::move(y), "mul");
    nodes_[id].back = [this, id, a, b] {
      const Tensor& gy = nodes_[id].grad;
      for (std::size_t i = 0; i < gy.values.size(); ++i) {
        nodes_[a].grad.values[i] += gy.values[i] * nodes_[b].val.values[i];
        nodes_[b].grad.values[i] += gy.values[i] * nodes_[a].val.values[i];
      }
    };
    return id;
  }

  NodeId scale(NodeId a, double c) {
    Tensor y = nodes_[a].val;
    for (double& v : y.values) v *= c;
    const NodeId id = push(std::move(y), "scale");
    nodes_[id].back = [this, id, a, c] {
      const Tensor& gy = nodes_[id].grad;
      for (std::size_t i = 0; i < gy.values.size(); ++i) nodes_[a].grad.values[i] += c * gy.values[i];
    };
    return id;
  }

  NodeId exp_elem(NodeId a) {
    Tensor y = nodes_[a].val;
    for (double& v : y.values) v = std::exp(v);
    const NodeId id = push(std::move(y), "exp");
    nodes_[id].back = [this, id, a] {
      const Tensor& gy = nodes_[id].grad;
      const Tensor& yv = nodes_[id].val;
      for (std::size_t i = 0; i < gy.values.size(); ++i) nodes_[a].grad.values[i] += gy.values[i] * yv.values[i];
    };
    return id;
  }

  NodeId tanh_elem(NodeId a) {
    Tensor y = nodes_[a].val;
    for (double& v : y.values) v = std::tanh(v);
    const NodeId id = push(std::move(y), "tanh");
    nodes_[id].back = [this, id, a] {
      const Tensor& gy = nodes_[id].grad;
      const Tensor& yv = nodes_[id].val;
      for (std::size_t i = 0; i < gy.values.size(); ++i) {
        nodes_[a].grad.values[i] += gy.values[i] * (1.0 - yv.values[i] * yv.values[i]);
      }
    };
    return id;
  }

  // Mean over batch of -log softmax(logits)[label]. Stabilized by row-max
  // subtraction; backward is (softmax - onehot) / batch.
  NodeId softmax_cross_entropy(NodeId logits, const std::vector<int>& labels) {
    const Tensor& lv = nodes_[logits].val;
    if (lv.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [batch x classes], got " + shape_str(lv));
    const std::size_t batch = lv.shape[0], classes = lv.shape[1];
    if (batch == 0) throw PreconditionError("softmax_cross_entropy: empty batch");
    if (labels.size() != batch) {
      throw LabelError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                       std::to_string(batch));
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw LabelError("label " + std::to_string(y) + " out of range [0, " + std::to_string(classes) + ")");
      }
    }
    std::vector<double> probs(batch * classes);
    double loss = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
      const double* row = &lv.values[r * classes];
      double mx = row[0];
      for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
      double z = 0.0;
      for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
      const double logz = std::log(z);
      for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - mx) / z;
      loss -= row[static_cast<std::size_t>(labels[r])] - mx - logz;
    }
    loss /= static_cast<double>(batch);
    const NodeId id = push(Tensor::scalar(loss), "softmax_cross_entropy");
    nodes_[id].back = [this, id, logits, labels, probs = std::move(probs), batch, classes] {
      const double g = nodes_[id].grad.values[0] / static_cast<double>(batch);
      Tensor& gl = nodes_[logits].grad;
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
          double d = probs[r * classes + c];
          if (c == static_cast<std::size_t>(labels[r])) d -= 1.0;
          gl.values[r * classes + c] += g * d;
        }
      }
    };
    return id;
  }

  // Mean over rows of the squared distance ||a_r - b_r||^2.
  NodeId mean_row_sq_dist(NodeId a, NodeId b) {
    require_same_shape(nodes_[a].val, nodes_[b].val, "mean_row_sq_dist");
    const Tensor& av = nodes_[a].val;
    const std::size_t rows = av.rows();
    if (rows == 0) throw PreconditionError("mean_row_sq_dist: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < av.values.size(); ++i) {
      const double d = av.values[i] - nodes_[b].val.values[i];
      acc += d * d;
    }
    acc /= static_cast<double>(rows);
    const NodeId id = push(Tensor::scalar(acc), "mean_row_sq_dist");
    nodes_[id].back = [this, id, a, b, rows] {
      const double g = nodes_[id].grad.values[0] * 2.0 / static_cast<double>(rows);
      for (std::size_t i = 0; i < nodes_[a].val.values.size(); ++i) {
        const double d = nodes_[a].val.values[i] - nodes_[b].val.values[i];
        nodes_[a].grad.values[i] += g * d;
        nodes_[b].grad.values[i] -= g * d;
      }
    };
    return id;
  }

  // KL(N(mu, exp(logvar)) || N(0, 1)) summed over dimensions, averaged over rows.
  NodeId kl_std_normal(NodeId mu, NodeId logvar) {
    require_same_shape(nodes_[mu].val, nodes_[logvar].val, "kl_std_normal");
    const Tensor& mv = nodes_[mu].val;
    const Tensor& lv = nodes_[logvar].val;
    const std::size_t rows = mv.rows();
    if (rows == 0) throw PreconditionError("kl_std_normal: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < mv.values.size(); ++i) {
      acc += -0.5 * (1.0 + lv.values[i] - mv.values[i] * mv.values[i] - std::exp(lv.values[i]));
    }
    acc /= static_cast<double>(rows);
    const NodeId id = push(Tensor::scalar(acc), "kl_std_normal");
    nodes_[id].back = [this, id, mu, logvar, rows] {
      const double g = nodes_[id].grad.values[0] / static_cast<double>(rows);
      const Tensor& mv = nodes_[mu].val;
      const Tensor& lv = nodes_[logvar].val;
      for (std::size_t i = 0; i < mv.values.size(); ++i) {
        nodes_[mu].grad.values[i] += g * mv.values[i];
        nodes_[logvar].grad.values[i] += g * 0.5 * (std::exp(lv.values[i]) - 1.0);
      }
    };
    return id;
  }

  // y[k, :] = x[idx[k], :]
  NodeId gather_rows(NodeId x, std::vector<std::size_t> idx) {
    const Tensor& xv = nodes_[x].val;
    if (xv.rank() != 2) throw ShapeError("gather_rows: input must be rank 2, got " + shape_str(xv));
    const std::size_t cols = xv.shape[1];
    Tensor y = Tensor::zeros({idx.size(), cols});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= xv.shape[0]) throw LookupError("gather_rows: row index out of range");
      std::copy_n(&xv.values[idx[k] * cols], cols, &y.values[k * cols]);
    }
    const NodeId id = push(std::move(y), "gather_rows");
    nodes_[id].back = [this, id, x, idx = std::move(idx), cols] {
      const Tensor& gy = nodes_[id].grad;
      Tensor& gx = nodes_[x].grad;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        for (std::size_t c = 0; c < cols; ++c) gx.values[idx[k] * cols + c] += gy.values[k * cols + c];
      }
    };
    return id;
  }

  // y[g, :] = mean over rows r with groups[r] == g. Every group must be
  // populated.
  NodeId group_mean(NodeId x, std::vector<std::size_t> groups, std::size_t n_groups) {
    const Tensor& xv = nodes_[x].val;
    if (xv.rank() != 2) throw ShapeError("group_mean: input must be rank 2, got " + shape_str(xv));
    if (groups.size() != xv.shape[0]) throw ShapeError("group_mean: one group id per row required");
    const std::size_t cols = xv.shape[1];
    std::vector<double> counts(n_groups, 0.0);
    Tensor y = Tensor::zeros({n_groups, cols});
    for (std::size_t r = 0; r < groups.size(); ++r) {
      if (groups[r] >= n_groups) throw LookupError("group_mean: group id out of range");
      counts[groups[r]] += 1.0;
      for (std::size_t c = 0; c < cols; ++c) y.values[groups[r] * cols + c] += xv.values[r * cols + c];
    }
    for (std::size_t g = 0; g < n_groups; ++g) {
      if (counts[g] == 0.0) throw CoverageError("group_mean: group " + std::to_string(g) + " has no rows");
      for (std::size_t c = 0; c < cols; ++c) y.values[g * cols + c] /= counts[g];
    }
    const NodeId id = push(std::move(y), "group_mean");
    nodes_[id].back = [this, id, x, groups = std::move(groups), counts = std::move(counts), cols] {
      const Tensor& gy = nodes_[id].grad;
      Tensor& gx = nodes_[x].grad;
      for (std::size_t r = 0; r < groups.size(); ++r) {
        const std::size_t g = groups[r];
        for (std::size_t c = 0; c < cols; ++c) gx.values[r * cols + c] += gy.values[g * cols + c] / counts[g];
      }
    };
    return id;
  }

  // Weighted sum of scalar nodes.
  NodeId weighted_sum(std::vector<std::pair<NodeId, double>> terms) {
    double acc = 0.0;
    for (const auto& [node, w] : terms) {
      if (nodes_[node].val.size() != 1) {
        throw ShapeError("weighted_sum: all terms must be scalars, got " + shape_str(nodes_[node].val));
      }
      acc += w * nodes_[node].val.values[0];
    }
    const NodeId id = push(Tensor::scalar(acc), "weighted_sum");
    nodes_[id].back = [this, id, terms = std::move(terms)] {
      const double g = nodes_[id].grad.values[0];
      for (const auto& [node, w] : terms) nodes_[node].grad.values[0] += g * w;
    };
    return id;
  }

  // Seeds the root gradient with 1 and replays the tape in reverse.
  void backward(NodeId root) {
    if (nodes_[root].val.size() != 1) {
      throw ShapeError("backward: root must be a scalar, got " + shape_str(nodes_[root].val));
    }
    nodes_[root].grad.values[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back();
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void()> back;
  };

  NodeId push(Tensor val, const char* op) {
    if (!val.all_finite()) throw DivergenceError(std::string("non-finite values produced by '") + op + "'");
    Node n;
    n.grad = Tensor::zeros(val.shape);
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId binary_elementwise(NodeId a, NodeId b, const char* op, double sign_b) {
    require_same_shape(nodes_[a].val, nodes_[b].val, op);
    Tensor y = nodes_[a].val;
    for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] += sign_b * nodes_[b].val.values[i];
    const NodeId id = push(std::move(y), op);
    nodes_[id].back = [this, id, a, b, sign_b] {
      const Tensor& gy = nodes_[id].grad;
      for (std::size_t i = 0; i < gy.values.size(); ++i) {
        nodes_[a].grad.values[i] += gy.values[i];
        nodes_[b].grad.values[i] += sign_b * gy.values[i];
      }
    };
    return id;
  }

  std::vector<Node> nodes_;
};

}  // namespace biozsl
