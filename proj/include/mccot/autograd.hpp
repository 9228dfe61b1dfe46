#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mccot/rng.hpp"
#include "mccot/tensor.hpp"

namespace mccot {

namespace detail {

struct Node {
  Tensor value;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's gradient and accumulates into the parents' gradients.
  std::function<void(Node&)> backward;
  bool leaf = true;
};

}  // namespace detail

/// Handle to a value in the autodiff graph. Copies share the same node.
class Var {
 public:
  Var() = default;
  /// Leaf variable; gradients are tracked iff value.requires_grad().
  explicit Var(Tensor value);

  static Var parameter(Tensor value);
  static Var constant(Tensor value);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_->value.requires_grad(); }
  bool is_leaf() const { return node_->leaf; }
  std::span<const double> grad() const { return node_->value.grad(); }
  void zero_grad() { node_->value.zero_grad(); }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Globally (per thread) disables graph construction while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Builds a non-leaf Var. If no parent requires a gradient (or grad mode is off)
/// the parents and backward closure are dropped.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(detail::Node&)> backward);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
void backward(const Var& loss);

// ---------------------------------------------------------------------------
// Differentiable primitives. Matrices are rank-2 row-major; a rank-1 tensor is
// treated as a single row where noted.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a[m x n] + b[n] added to every row.
Var add_row(const Var& a, const Var& b);
Var sum(const Var& a);
Var gelu(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Rows of table[V x d] selected by ids, result [ids.size() x d].
Var embedding(const Var& table, std::span<const int> ids);
/// Inverted dropout. Identity when !training or p == 0.
Var dropout(const Var& x, double p, RngStream& rng, bool training);
/// Dropout over equal consecutive blocks of x, block b drawing its mask from streams[b].
Var dropout(const Var& x, double p, std::span<RngStream* const> streams, bool training);
/// Multi-head scaled dot-product attention on already-projected q[m x D], k[n x D], v[n x D].
/// With blocks > 1 the rows hold that many independent sequences stacked; each
/// query block attends only to the matching key block.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t n_heads, bool causal, std::size_t blocks = 1);
/// Rows [begin, begin + count) of a matrix.
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
/// -logits[target] + logsumexp(logits) for logits of shape [V].
Var softmax_cross_entropy(const Var& logits, int target);
/// Weighted mean over rows of per-row cross-entropy; weights empty = all ones.
Var sequence_cross_entropy(const Var& logits, std::span<const int> targets,
                           std::span<const double> row_weights = {});

/// Plain (non-differentiable) cross-entropy of one logit row.
double cross_entropy(std::span<const double> logits, int target);

}  // namespace mccot
