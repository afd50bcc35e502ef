#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cmf/activation.hpp"
#include "cmf/tensor.hpp"

namespace cmf::diff {

class Tape;

/// Handle to a rank-2 value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode differentiation tape over rank-2 tensors.
///
/// Every operation appends a node holding its value and, when any input needs
/// a gradient, a closure that pushes the output adjoint back to its inputs.
/// `backward` walks the nodes in reverse and only runs closures of nodes
/// reachable from the root. All node values are checked for finiteness as
/// they are produced; a NaN or Inf raises NumericError naming the operation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input. Rank-0/1 tensors are stored as a single row.
  Var leaf(const Tensor& value);
  /// Input that never receives a gradient.
  Var constant(const Tensor& value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Adjoint of `v` after backward(); zeros if `v` was not reached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by operation implementations.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;
  Var record(Tensor value, const char* op, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const char* op, std::span<const Var> inputs, Backward backward);
  /// Adds `g` into the adjoint of `v` (no-op for constants).
  void accumulate(Var v, const Tensor& g);
  /// Adds `g` into the rectangle of v's adjoint starting at (row, col).
  void accumulate_block(Var v, const Tensor& g, std::size_t row, std::size_t col);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    const char* op = "input";
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
};

// Elementwise / structural operations. Binary operations require equal shapes
// unless stated otherwise.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);  // Hadamard product
Var operator-(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// a[B x n] + b[1 x n] broadcast over rows.
Var add_row(Var a, Var b);
Var matmul(Var a, Var b);
/// Applies the `order`-th derivative of `act` elementwise.
Var activate(Var a, const Activation& act, int order = 0);
Var square(Var a);
/// Elementwise square root with a zero subgradient at 0.
Var safe_sqrt(Var a);
/// Sum of all entries, as 1x1.
Var sum(Var a);
Var mean(Var a);
/// Row sums, [B x n] -> [B x 1].
Var row_sum(Var a);
/// Column j as [B x 1].
Var column(Var a, std::size_t j);
/// Rows [begin, begin + count).
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var hconcat(std::span<const Var> parts);
Var vconcat(std::span<const Var> parts);
/// Reinterprets `count = rows*cols` entries of a 1 x N row starting at
/// `offset` as a rows x cols matrix.
Var view(Var flat, std::size_t offset, std::size_t rows, std::size_t cols);
/// Mean binary cross-entropy of logistic(logits) against 0/1 targets, with the
/// probability clamped to [clamp, 1 - clamp]. Outside the clamp the gradient is 0.
Var bce_with_logits(Var logits, const Tensor& targets, double clamp = 1e-7);

/// Scalar function of a parameter tensor, expressed on a tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct ValueAndGrad {
  double value = 0.0;
  Tensor grad;
};

/// Evaluates f at p and returns df/dp with p's shape.
ValueAndGrad value_and_grad(const ScalarFn& f, const Tensor& p);
Tensor grad_scalar(const ScalarFn& f, const Tensor& p);

}  // namespace cmf::diff
