#ifndef MTDL_TAPE_HPP_
#define MTDL_TAPE_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "mtdl/tensor.hpp"

namespace mtdl {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatVec,
  kAdd,
  kMul,
  kTanh,
  kRelu,
  kSigmoid,
  kSteThreshold,
  kScale,
  kMeanPool,
  kSumPool,
  kSlice,
  kDot,
  kSoftmaxXent,
};

struct TapeNode {
  OpKind kind = OpKind::kLeaf;
  NodeId in0 = 0;
  NodeId in1 = 0;
  std::uint32_t arg0 = 0;  // slice offset / pool span start / class label
  std::uint32_t arg1 = 0;  // slice length / pool span count
  Tensor value;
  Tensor aux;  // saved softmax probabilities
};

// Define-by-run operation record. Node ids are topologically ordered by
// construction; backward sweeps them in strictly decreasing id order. A tape
// belongs to one thread; rebuild (or reset) it per sample.
class Tape {
 public:
  NodeId leaf(Tensor value);
  NodeId leaf_scalar(double value);
  NodeId leaf_zeros(std::vector<std::size_t> shape);

  // y = W x for matrix W [m x n] and vector x [n].
  NodeId matvec(NodeId w, NodeId x);

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);

  // Hard binary gate: 1 if the soft score exceeds the threshold (strictly),
  // else 0. Backward passes the incoming gradient through unchanged, so the
  // chain to the pre-sigmoid logit is sigma(q)(1 - sigma(q)).
  NodeId ste_threshold(NodeId soft, double threshold);

  // y = s * v for scalar node s and vector node v. Backward sends s * g to v
  // and <g, v> to s.
  NodeId scale(NodeId v, NodeId s);

  NodeId mean_pool(std::span<const NodeId> items);
  NodeId sum_pool(std::span<const NodeId> items);

  NodeId slice(NodeId x, std::size_t offset, std::size_t length);
  NodeId dot(NodeId a, NodeId b);

  // loss = -log softmax(logits)[label], max-subtracted for stability.
  NodeId softmax_cross_entropy(NodeId logits, std::size_t label);

  // Reverse sweep from a scalar loss node. Seeds dL/dL = 1 and populates a
  // gradient tensor for every node (exactly zero off the loss path). Throws
  // StateError if called twice without reset().
  void backward(NodeId loss);

  void reset();

  // References returned by value()/grad() are invalidated by the next op
  // recorded on the tape; copy before building further nodes.
  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  double scalar_value(NodeId id) const { return nodes_[id].value.data[0]; }
  const Tensor& grad(NodeId id) const;
  const TapeNode& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  NodeId push(TapeNode node);
  NodeId pool(std::span<const NodeId> items, OpKind kind);
  Tensor& grad_ref(NodeId id);
  void backprop_node(NodeId id);

  std::vector<TapeNode> nodes_;
  std::vector<NodeId> pool_inputs_;
  std::vector<Tensor> grads_;
  std::vector<char> live_;
  bool backward_done_ = false;
};

// Numerically guarded logistic function; never overflows.
double stable_sigmoid(double x);

}  // namespace mtdl

#endif  // MTDL_TAPE_HPP_
