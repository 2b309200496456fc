#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mmcdfsl/tensor.hpp"

// Minimal reverse-mode differentiation over row-major matrices.
//
// A Tape records every operation of one forward pass. Parameters enter as
// leaves bound to an external gradient buffer; Tape::backward() walks the
// recorded nodes in reverse and accumulates into those buffers. A leaf bound
// to a null buffer is a constant: no node downstream of only-constant inputs
// records a backward closure.
namespace mmcdfsl::ad {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  const Mat& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Mat& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Leaf referring to `value` (not copied; must outlive the tape). Gradients
  /// are added into `*grad`, which is resized to zeros on first use; an empty
  /// `*grad` after backward() means the parameter had no gradient path.
  Var parameter(const Mat& value, Mat* grad);

  /// Seeds d(loss)/d(loss) = seed and back-propagates. `loss` must be 1 x 1 and finite.
  void backward(Var loss, double seed = 1.0);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Operation plumbing.
  Var record(Mat value, bool requires_grad, BackwardFn fn);
  const Mat& value_of(const Var& v) const;
  bool requires_grad_of(const Var& v) const { return nodes_[v.id_].requires_grad; }

  template <class Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

 private:
  struct Node {
    Mat value;
    const Mat* borrowed = nullptr;
    Mat grad;
    bool requires_grad = false;
    Mat* sink = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

/// Parameter leaf; when `grad` is null the leaf is a constant.
inline Var param(Tape& t, const Mat& value, Mat* grad) { return t.parameter(value, grad); }

Var matmul(Var a, Var b);
/// x * W + b (b is a 1 x out row broadcast over rows).
Var affine(Var x, Var w, Var b);
Var add(Var a, Var b);
Var scale(Var a, double s);
Var gelu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
/// Fused multi-head self-attention over a packed [Q | K | V] matrix (n x 3d) -> n x d.
Var attention(Var qkv, int heads);
Var gather_rows(Var a, std::vector<int> rows);
/// total x cols matrix with `rows` placed at `indices`; every other row equals `fill` (1 x cols).
Var scatter_fill(Var rows, std::vector<int> indices, Var fill, int total);
/// Column means, 1 x cols.
Var mean_rows(Var a);
/// Identity in value, zero partial derivatives.
Var stop_gradient(Var a);

/// Mean squared error against a constant target; 0 when the target is empty.
Var mse(Var pred, const Mat& target);
/// Mean cross-entropy of row-wise logits against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);
/// Sum of squared differences (a - b).
Var squared_distance(Var a, Var b);
Var sum_squares(Var a);
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);
Var sum(std::span<const Var> terms);

/// Plain row-wise softmax (no tape).
Mat softmax_rows(const Mat& logits);

}  // namespace mmcdfsl::ad
