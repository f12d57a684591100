#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "drtl/kernels.hpp"
#include "drtl/parameter.hpp"
#include "drtl/tensor.hpp"

namespace drtl {

using kernels::Activation;

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a valid
/// topological order; backward() walks them in exact reverse.
class Graph {
 public:
  /// Called during backward with the node's output value and its accumulated gradient.
  using BackwardFn = std::function<void(Graph&, const Tensor& out, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter; gradients accumulate directly into `p.grad`.
  Var param(Parameter& p);

  /// Registers a new op. `backward` may be empty when no input needs a gradient.
  Var emit(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  double scalar(Var v) const;
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  /// Gradient accumulator for `v`, or nullptr when nothing upstream is trainable.
  Tensor* grad_sink(Var v);
  const Tensor* grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse creation order.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // -- operations -----------------------------------------------------------

  /// Rows of `table` ([|V| x l]) selected by token id -> [m x l].
  Var lookup(Parameter& table, std::span<const int> ids);
  Var conv1d(Var input, Var filters, Var bias, Activation act);
  Var global_max_pool_1d(Var input);
  /// [m x l], [n x l] -> [m x n] of row dot products.
  Var interaction(Var a, Var b);
  Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, Activation act);
  Var max_pool_2d(Var input, std::size_t size, std::size_t stride);
  Var affine(Var input, Var weight, Var bias);
  Var matvec(Var weight, Var input);

  Var reshape(Var v, Shape shape);
  Var concat(std::span<const Var> parts);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var v, double factor);
  /// Sum of scalar nodes.
  Var sum(std::span<const Var> scalars);
  /// Sum of squares of every element.
  Var squared_norm(Var v);

  /// -log softmax(logits)[label].
  Var softmax_cross_entropy(Var logits, std::size_t label);
  /// sum_j p_j log p_j with p = softmax(logits).
  Var entropy_term(Var logits);

 private:
  struct Node {
    Tensor value;
    Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor grad;
    bool needs_grad = false;
  };

  const Tensor& value_of(std::size_t id) const;
  void require_same_shape(Var a, Var b, const char* op) const;

  std::deque<Node> nodes_;
};

}  // namespace drtl
