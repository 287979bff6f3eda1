#include "ser/tensor.hpp"

#include <unordered_set>

namespace ser {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  using Node = detail::Node<Scalar>;
  if (!loss.defined() || loss.size() != 1)
    throw Error(ErrorCode::NotScalar, "backward() needs a scalar loss, got " +
                                          (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  Node* root = loss.node().get();
  if (root->consumed) throw Error(ErrorCode::GraphConsumed, "backward() already ran on this graph");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->consumed)
        throw Error(ErrorCode::GraphConsumed, "graph contains a node from an already consumed backward pass");
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer() += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
  }

  for (Node* node : order) {
    if (!node->backward) continue;  // leaves stay reusable
    node->consumed = true;
    node->backward = nullptr;
    node->parents.clear();
  }
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace ser
