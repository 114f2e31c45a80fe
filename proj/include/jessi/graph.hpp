#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "jessi/common.hpp"
#include "jessi/tensor.hpp"

namespace jessi {

// Handle into a Graph's tape. Plain index, cheap to copy; stays valid for the
// lifetime of the graph that produced it.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in forward order, which is a
// topological order of the DAG, so the backward sweep walks ids from the root
// downward and visits each reachable node exactly once. One graph instance is
// single-threaded; independent graphs may run concurrently.
template <typename Real>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::int32_t self)>;

  Var input(Tensor<Real> value) {
    return push(Node{std::move(value), Tensor<Real>(), {}, nullptr, nullptr, "input"});
  }

  // Leaf bound to a Parameter. Repeated calls for the same parameter return
  // the same node so its gradient accumulates in one place per pass.
  Var param(Parameter<Real>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(Node{p.value, Tensor<Real>(), {}, nullptr, &p, "param"});
    param_nodes_[&p] = v.id;
    return v;
  }

  Var make_node(Tensor<Real> value, std::vector<Var> inputs, BackwardFn bwd, const char* tag) {
    std::vector<std::int32_t> ids;
    ids.reserve(inputs.size());
    for (Var v : inputs) {
      if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw ValueError(strf("graph: op '%s' got an invalid input handle", tag));
      ids.push_back(v.id);
    }
    return push(Node{std::move(value), Tensor<Real>(), std::move(ids), std::move(bwd), nullptr, tag});
  }

  const Tensor<Real>& val(Var v) const { return nodes_[check(v)].value; }

  // Gradient of the given node; allocated during backward(). Adding into it is
  // how backward rules push gradients to their inputs.
  Tensor<Real>& grad(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.size() != n.value.size()) n.grad = Tensor<Real>(n.value.shape);
    return n.grad;
  }

  const char* tag(Var v) const { return nodes_[check(v)].tag; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Backpropagates d(root)/d(node) from a scalar root. Node gradients are
  // reset each call; Parameter accumulators are added to, so calling twice
  // doubles them.
  void backward(Var root) {
    const std::size_t r = check(root);
    if (nodes_[r].value.size() != 1)
      throw ValueError(strf("backward: root must be scalar, got shape %s",
                            shape_str(nodes_[r].value.shape).c_str()));

    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<std::int32_t> stack{static_cast<std::int32_t>(r)};
    while (!stack.empty()) {
      std::int32_t u = stack.back();
      stack.pop_back();
      if (reachable[u]) continue;
      reachable[u] = 1;
      for (std::int32_t v : nodes_[u].inputs)
        if (!reachable[v]) stack.push_back(v);
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!reachable[i]) continue;
      Node& n = nodes_[i];
      if (n.grad.size() != n.value.size())
        n.grad = Tensor<Real>(n.value.shape);
      else
        n.grad.zero();
    }
    nodes_[r].grad.data[0] = Real(1);

    for (std::size_t i = r + 1; i-- > 0;) {
      if (!reachable[i]) continue;
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, static_cast<std::int32_t>(i));
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!reachable[i] || nodes_[i].param == nullptr) continue;
      Parameter<Real>& p = *nodes_[i].param;
      const Tensor<Real>& g = nodes_[i].grad;
      for (std::size_t j = 0; j < g.size(); ++j) p.grad.data[j] += g.data[j];
    }
  }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
    Parameter<Real>* param;
    const char* tag;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::size_t check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw ValueError("graph: invalid node handle");
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<Real>*, std::int32_t> param_nodes_;
};

}  // namespace jessi
