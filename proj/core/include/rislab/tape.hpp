#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "rislab/tensor.hpp"

namespace rislab {

/**
 * Reverse-mode automatic differentiation over RealTensor.
 *
 * Every primitive call appends exactly one node holding the forward value and
 * a closure that scatters the node's adjoint onto its inputs.  Node ids are
 * topologically ordered by construction (inputs are created before their
 * consumers), so backward() is a single reverse sweep that visits each node
 * once.  Gradients are only materialized along paths that reach a
 * differentiable leaf; constants cost nothing in the backward pass.
 *
 * Broadcasting for add/sub/mul/div follows matrix-against-row/column/scalar
 * rules: (r,c) op (r,c), (r,c) op (1,c), (r,c) op (r,1), (r,c) op (1,1),
 * in either operand order.  The adjoint of a broadcast operand is the
 * corresponding sum-reduction.
 */
class Tape {
 public:
  using NodeId = std::size_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /** Differentiable leaf (parameter or differentiable input). */
  NodeId input(RealTensor value);
  /** Non-differentiable leaf; backward never propagates into it. */
  NodeId constant(RealTensor value);

  // --- primitive set ------------------------------------------------------
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  /** Concatenate along axis 0 (rows) or 1 (columns). */
  NodeId concat(const std::vector<NodeId>& parts, int axis);
  /** Rectangular slice, half-open row/column ranges. */
  NodeId slice(NodeId a, std::size_t r0, std::size_t r1, std::size_t c0,
               std::size_t c1);
  NodeId leaky_relu(NodeId a, double slope = 0.01);
  /** Row-wise softmax (over the last axis), shift-stabilized. */
  NodeId softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId sqrt(NodeId a);
  /** Sum/mean over an axis with kept dimension: axis 0 -> 1 x c, axis 1 -> r x 1. */
  NodeId sum_axis(NodeId a, int axis);
  NodeId mean_axis(NodeId a, int axis);
  /** Elementwise max over same-shaped tensors; the adjoint is routed to the
   *  first operand attaining the maximum. */
  NodeId max_many(const std::vector<NodeId>& parts);
  /** Scalar broadcasts. */
  NodeId scale(NodeId a, double c);
  NodeId add_scalar(NodeId a, double c);

  /**
   * Per-row constant linear map: y[r,:] = x[r,:] * K_r with K_r the r-th
   * (in x out) row-major block of `kernels`.  Used to push batched real
   * features through per-sample complex channel operators that are constant
   * with respect to the parameters.
   */
  NodeId linmap_rows(NodeId x, std::shared_ptr<const std::vector<double>> kernels,
                     std::size_t in_dim, std::size_t out_dim);

  /**
   * Elementwise unit-modulus normalization of (re, im) pairs laid out as
   * [Re block | Im block] along columns.  Pairs with magnitude <= 1e-12 are
   * replaced by 1+0j (zero gradient) and counted in dead_unit_count().
   */
  NodeId unit_modulus(NodeId a);

  // --- execution ----------------------------------------------------------
  const RealTensor& value(NodeId id) const { return nodes_[id].value; }
  /** Runs the reverse sweep from a scalar (1 x 1) loss node. */
  void backward(NodeId loss);
  /** Gradient of the last backward() target w.r.t. node `id` (empty if none). */
  const RealTensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const {
    return id < grads_.size() && !grads_[id].empty();
  }

  std::size_t size() const { return nodes_.size(); }
  int dead_unit_count() const { return dead_units_; }
  void clear();

  /** Finiteness checking after every primitive (on by default). */
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    RealTensor value;
    std::vector<NodeId> inputs;
    std::function<void(Tape&, NodeId)> backprop;  // empty for leaves
    bool requires_grad = false;
  };

  NodeId push(RealTensor value, std::vector<NodeId> inputs,
              std::function<void(Tape&, NodeId)> backprop);
  void accumulate(NodeId id, const RealTensor& delta);
  /** Sum-reduce `g` onto the shape of node `id` (for broadcast operands). */
  RealTensor reduce_to_shape(const RealTensor& g, NodeId id) const;
  void check_node(NodeId id, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<RealTensor> grads_;
  int dead_units_ = 0;
  bool check_finite_ = true;
  RealTensor empty_;
};

/** Two-layer perceptron block: lrelu(lrelu(x*W1 + b1)*W2 + b2). */
Tape::NodeId mlp2(Tape& t, Tape::NodeId x, Tape::NodeId w1, Tape::NodeId b1,
                  Tape::NodeId w2, Tape::NodeId b2, double slope = 0.01);

}  // namespace rislab
