#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace carf {

// Reverse-mode autodiff over a small fixed set of matrix-level operations.
// A tape is built fresh for every loss evaluation and swept once backwards.
//
// Gradient accumulation skips exact zeros: a node whose incoming gradient is
// identically zero is never marked live, and dead subtrees are skipped in the
// backward sweep. Besides saving work, this makes "weight exactly 0" blends
// bit-identical to never having built the weighted branch at all, which the
// training-equivalence guarantees (view weight 1.0 vs single-view run) rely
// on.
class Tape {
 public:
  using NodeId = int32_t;

  NodeId param(ParamTensor& p);
  NodeId constant(Tensor t);

  // C = op(A) * op(B) with optional transposes.
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId add(NodeId a, NodeId b);              // same shape
  NodeId scale(NodeId a, double c);            // c * A
  NodeId add_const(NodeId a, double c);        // A + c elementwise
  NodeId add_rowvec(NodeId m, NodeId v);       // each row of m plus v
  NodeId relu(NodeId a);                       // derivative 0 at exactly 0
  NodeId sigmoid(NodeId a);
  NodeId row_softmax(NodeId a);                // stabilized, rows sum to 1
  NodeId affine(NodeId x, NodeId w, NodeId b); // W (m,n) * x (n) + b (m)
  NodeId matvec(NodeId m, NodeId v);
  NodeId dot(NodeId a, NodeId b);              // vectors -> rank-0 scalar
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId mean_rows(NodeId x, std::vector<int64_t> indices);  // mean of selected rows
  NodeId l2_normalize(NodeId x);
  // Stabilized -log softmax(logits)[target].
  NodeId cross_entropy_index(NodeId logits, int64_t target);

  // Escape hatch for module-defined operations (mask compositing, pixel
  // losses). `backward` receives the tape and the node's own id; it reads
  // grad(self) and pushes into parents via accumulate().
  NodeId make_node(Tensor value, std::function<void(Tape&, NodeId)> backward);

  const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }
  double scalar(NodeId id) const;

  // Gradient of a node; zeros if the backward sweep never reached it.
  const Tensor& grad(NodeId id);
  bool live(NodeId id) const { return nodes_[check(id)].live; }

  // dst.grad[i] += src[i], skipping exact zeros (see class comment).
  void accumulate(NodeId dst, const double* src, int64_t n);
  void accumulate_at(NodeId dst, int64_t index, double v);

  // Seed d(loss)/d(loss) = 1 and sweep. Parameter leaves flush into
  // ParamTensor::grad. `loss` must be rank-0 and finite.
  void backward(NodeId loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor gradbuf;
    bool live = false;           // received a nonzero gradient
    ParamTensor* leaf = nullptr;
    std::function<void(Tape&, NodeId)> back;
  };

  NodeId push(Tensor value, ParamTensor* leaf, std::function<void(Tape&, NodeId)> back);
  int32_t check(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
      throw_validation("tape: node id out of range");
    return id;
  }
  Tensor& gradbuf(NodeId id);
  const Tensor& val(NodeId id) const { return nodes_[check(id)].value; }

  std::vector<Node> nodes_;
  Tensor empty_grad_;  // returned for nodes the sweep never reached
};

}  // namespace carf
