#include "ia/autodiff.hpp"

#include <sstream>

namespace ia {

namespace {

std::string describe(const Node& n) {
  std::ostringstream os;
  os << "node " << n.id << " (";
  if (n.op)
    os << n.op->name();
  else
    os << (n.kind == NodeKind::parameter ? "parameter" : "constant");
  if (!n.name.empty()) os << " '" << n.name << "'";
  os << ")";
  return os.str();
}

void require_scalar(const Tape& tape, NodeId id, const char* what) {
  if (tape.value(id).size() != 1)
    throw TapeError(std::string(what) + ": node " + std::to_string(id) +
                    " is not scalar, shape " + to_string(tape.value(id).shape()));
}

// Reverse sweep from `from` (seeded with ones) down to `lowest`. Only nodes with
// wanted[i] set receive gradient.
std::vector<std::optional<Tensor>> reverse_sweep(const Tape& tape, NodeId from, NodeId lowest,
                                                 const std::vector<char>& wanted) {
  const auto& nodes = tape.nodes();
  std::vector<std::optional<Tensor>> grads(from + 1);
  grads[from] = Tensor::ones(nodes[from].value.shape());

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> targets;
  for (NodeId i = from + 1; i-- > lowest;) {
    const Node& n = nodes[i];
    if (!grads[i] || !n.op || n.pinned) continue;
    inputs.clear();
    targets.clear();
    bool any = false;
    for (NodeId in : n.inputs) {
      inputs.push_back(&nodes[in].value);
      if (in >= lowest && wanted[in]) {
        if (!grads[in]) grads[in] = Tensor::zeros(nodes[in].value.shape());
        targets.push_back(&*grads[in]);
        any = true;
      } else {
        targets.push_back(nullptr);
      }
    }
    if (any) n.op->backward(inputs, n.value, *grads[i], n.state, targets);
  }
  return grads;
}

}  // namespace

NodeId Tape::push(Node n) {
  n.id = nodes_.size();
  nodes_.push_back(std::move(n));
  return nodes_.back().id;
}

NodeId Tape::constant(Tensor value, std::string name) {
  Node n;
  n.kind = NodeKind::constant;
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Tape::parameter(Tensor value, std::string name) {
  Node n;
  n.kind = NodeKind::parameter;
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Tape::apply(std::shared_ptr<const Op> op, std::vector<NodeId> inputs) {
  for (NodeId in : inputs)
    if (in >= nodes_.size())
      throw TapeError(std::string(op->name()) + ": input node " + std::to_string(in) +
                      " does not exist");
  Node n;
  n.kind = NodeKind::op;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.id = nodes_.size();
  n.value = evaluate(n);
  return push(std::move(n));
}

const Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size()) throw TapeError("node " + std::to_string(id) + " does not exist");
  return nodes_[id];
}

Node& Tape::mutable_node(NodeId id) {
  if (id >= nodes_.size()) throw TapeError("node " + std::to_string(id) + " does not exist");
  return nodes_[id];
}

std::vector<NodeId> Tape::parameters() const {
  std::vector<NodeId> out;
  for (const Node& n : nodes_)
    if (n.kind == NodeKind::parameter) out.push_back(n.id);
  return out;
}

void Tape::set_leaf(NodeId id, Tensor value) {
  Node& n = mutable_node(id);
  if (n.op) throw TapeError("set_leaf: " + describe(n) + " is not a leaf");
  if (value.shape() != n.value.shape())
    throw ShapeError("set_leaf: " + describe(n) + " has shape " + to_string(n.value.shape()) +
                     ", got " + to_string(value.shape()));
  n.value = std::move(value);
}

Tensor Tape::evaluate(Node& n) const {
  std::vector<const Tensor*> inputs;
  inputs.reserve(n.inputs.size());
  for (NodeId in : n.inputs) inputs.push_back(&nodes_[in].value);
  Tensor out;
  try {
    out = n.op->forward(inputs, n.state);
  } catch (const ShapeError& e) {
    throw ShapeError(describe(n) + ": " + e.what());
  }
  if (!out.all_finite()) throw NonFiniteError(describe(n) + ": produced a non-finite value");
  return out;
}

void Tape::recompute(NodeId first) {
  for (NodeId i = first; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op && !n.pinned) n.value = evaluate(n);
  }
}

void Tape::replace_and_recompute(NodeId id, Tensor value) {
  Node& target = mutable_node(id);
  if (value.shape() != target.value.shape())
    throw ShapeError("reforward_from: " + describe(target) + " has shape " +
                     to_string(target.value.shape()) + ", replacement has " +
                     to_string(value.shape()));
  target.value = std::move(value);
  if (target.op) target.pinned = true;

  std::vector<char> dirty(nodes_.size(), 0);
  dirty[id] = 1;
  for (NodeId i = id + 1; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    for (NodeId in : n.inputs)
      if (dirty[in]) {
        dirty[i] = 1;
        break;
      }
    if (dirty[i] && !n.pinned) n.value = evaluate(n);
  }
}

Tensor forward(Tape& tape) {
  if (tape.size() == 0) throw TapeError("forward: empty tape");
  tape.recompute();
  return tape.value(tape.size() - 1);
}

Tensor backward_to(const Tape& tape, NodeId source, NodeId target) {
  tape.node(source);
  tape.node(target);
  require_scalar(tape, source, "backward_to");
  // Descendants of target, stopping at pinned nodes.
  const auto& nodes = tape.nodes();
  std::vector<char> reach(source + 1, 0);
  if (target <= source) {
    reach[target] = 1;
    for (NodeId i = target + 1; i <= source; ++i) {
      if (nodes[i].pinned) continue;
      for (NodeId in : nodes[i].inputs)
        if (in >= target && reach[in]) {
          reach[i] = 1;
          break;
        }
    }
  }
  if (target > source || !reach[source])
    throw TapeError("backward_to: node " + std::to_string(target) +
                    " is not an ancestor of node " + std::to_string(source));
  auto grads = reverse_sweep(tape, source, target, reach);
  return grads[target] ? std::move(*grads[target]) : Tensor::zeros(tape.value(target).shape());
}

std::map<NodeId, Tensor> backward_params(Tape& tape, NodeId loss) {
  tape.node(loss);
  require_scalar(tape, loss, "backward_params");
  const auto& nodes = tape.nodes();
  std::vector<char> needs(loss + 1, 0);
  for (NodeId i = 0; i <= loss; ++i) {
    const Node& n = nodes[i];
    if (n.kind == NodeKind::parameter) {
      needs[i] = 1;
    } else if (n.op && !n.pinned) {
      for (NodeId in : n.inputs)
        if (needs[in]) {
          needs[i] = 1;
          break;
        }
    }
  }
  auto grads = needs[loss] ? reverse_sweep(tape, loss, 0, needs)
                           : std::vector<std::optional<Tensor>>(loss + 1);
  std::map<NodeId, Tensor> out;
  for (NodeId id : tape.parameters()) {
    Tensor g = id <= loss && grads[id] ? std::move(*grads[id])
                                       : Tensor::zeros(tape.value(id).shape());
    tape.mutable_node(id).grad = g;
    out.emplace(id, std::move(g));
  }
  return out;
}

Tape reforward_from(const Tape& tape, NodeId node, Tensor replacement) {
  Tape copy = tape;
  copy.replace_and_recompute(node, std::move(replacement));
  return copy;
}

}  // namespace ia
