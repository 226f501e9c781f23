#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "divens/tensor.hpp"

namespace divens::ng {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Append-only tape of primitive operations. Nodes are recorded in
/// evaluation order, so the tape is always topologically sorted and a
/// single reverse sweep computes all gradients.
///
/// A Graph is single-threaded; independent graphs may run concurrently.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records a node. `backward` is only invoked when some input needs a
  /// gradient; it receives this graph and the node's own id.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::string_view op(Var v) const { return nodes_[v.id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Gradients accumulate; call
  /// zero_grad() before a second backward over the same tape.
  void backward(Var loss);
  void zero_grad();

  bool has_grad(Var v) const;
  /// Gradient buffer of a node after backward(); throws if none was produced.
  const Tensor& grad(Var v) const;

  /// Upstream gradient of node `id` during backward.
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of `id`, zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Primitive operations. All shapes are checked; mismatches raise
// Error{kShapeMismatch} naming the op and the shapes involved.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var neg(Var a);
/// Adds a length-n vector to every row of an m x n matrix.
Var add_row(Var a, Var row);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
/// Natural log; inputs must be positive.
Var log(Var a);

Var sum(Var a);
Var mean(Var a);
/// Reduces a matrix along `axis` (0: over rows, 1: over columns).
Var sum_axis(Var a, std::size_t axis);
Var mean_axis(Var a, std::size_t axis);

/// Softmax / log-softmax / log-sum-exp over the last axis (per row).
Var softmax(Var a);
Var log_softmax(Var a);
Var logsumexp(Var a);

/// Euclidean norm along `axis` of a matrix.
Var l2norm_axis(Var a, std::size_t axis);
/// Row-wise L2 normalization. Rows with norm below `tiny` are replaced by
/// the constant uniform direction 1/sqrt(n) and pass no gradient.
Var l2_normalize_rows(Var a, double tiny = 1e-12);

/// Same data, new shape (element counts must agree).
Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice_cols(Var a, std::size_t start, std::size_t count);
/// Drops column index[i] from row i, preserving the order of the others.
Var remove_index_rows(Var a, std::span<const std::size_t> index);
/// Gathers element (i, index[i]) from each row into a vector.
Var pick_rows(Var a, std::span<const std::size_t> index);

/// Shannon entropy per row (vector for a matrix input, scalar for a
/// vector input) with 0 * log 0 = 0.
Var entropy(Var probs);

Var det(Var square);
Var inverse(Var square);
/// log det for matrices with positive determinant (e.g. SPD Gram matrices).
Var logdet(Var square);

/// Batched log det(N_b N_b^T + offset * I) where N_b stacks row b of every
/// input (K inputs, each B x m). Returns a length-B vector. Gradient uses
/// d/dN logdet = 2 (G + offset I)^{-1} N.
Var gram_logdet(std::span<const Var> members, double offset);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return neg(a); }

/// Max over coordinates of |analytic - central difference| / (|central| + 1e-8).
/// `f` builds a scalar on the supplied graph from a leaf holding the point.
double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point, double h = 1e-5);

}  // namespace divens::ng
