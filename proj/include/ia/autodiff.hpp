#pragma once

#include "ia/tensor.hpp"

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ia {

using NodeId = std::size_t;

/// Scratch an op may record during forward and read back in backward
/// (argmax positions for the pooling ops).
struct OpState {
  std::vector<Index> indices;
};

/// A differentiable operation. Implementations are immutable and may be
/// shared between tapes.
class Op {
 public:
  virtual ~Op() = default;
  virtual std::string_view name() const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs, OpState& state) const = 0;
  /// Accumulates dOut/dInput_i * grad_out into grads[i] for every non-null grads[i].
  /// grads[i] is pre-sized like inputs[i].
  virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output,
                        const Tensor& grad_out, const OpState& state,
                        std::span<Tensor* const> grads) const = 0;
};

enum class NodeKind { constant, parameter, op };

struct Node {
  NodeId id = 0;
  NodeKind kind = NodeKind::constant;
  std::shared_ptr<const Op> op;
  std::vector<NodeId> inputs;
  Tensor value;
  std::optional<Tensor> grad;
  OpState state;
  std::string name;
  // Set by reforward_from: value is fixed and gradients stop here.
  bool pinned = false;
};

class TapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Define-by-run reverse-mode tape. Nodes are appended in topological order;
/// values are computed eagerly when a node is added.
class Tape {
 public:
  NodeId constant(Tensor value, std::string name = {});
  NodeId parameter(Tensor value, std::string name = {});
  NodeId apply(std::shared_ptr<const Op> op, std::vector<NodeId> inputs);

  const Node& node(NodeId id) const;
  const Tensor& value(NodeId id) const { return node(id).value; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<NodeId> parameters() const;

  /// Replaces the value of a leaf node without recomputing descendants.
  void set_leaf(NodeId id, Tensor value);

  /// Recomputes every op node in order, starting at first. Pinned nodes keep their value.
  void recompute(NodeId first = 0);

  /// Pins node to value and recomputes its descendants in place.
  void replace_and_recompute(NodeId id, Tensor value);

  Node& mutable_node(NodeId id);

 private:
  Tensor evaluate(Node& n) const;
  NodeId push(Node n);

  std::vector<Node> nodes_;
};

/// Replays the tape from its leaf values; returns the value of the last node.
Tensor forward(Tape& tape);

/// dSource/dTarget. Leaves parameter gradients untouched.
Tensor backward_to(const Tape& tape, NodeId source, NodeId target);

/// Gradient of a scalar loss with respect to every parameter node. Also
/// stores each gradient in the parameter node's grad field.
std::map<NodeId, Tensor> backward_params(Tape& tape, NodeId loss);

/// Copy of tape in which node holds replacement as a fixed value (no gradient
/// flows into its inputs) and every descendant is recomputed.
Tape reforward_from(const Tape& tape, NodeId node, Tensor replacement);

}  // namespace ia
