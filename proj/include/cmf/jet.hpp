#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cmf/activation.hpp"
#include "cmf/tape.hpp"

namespace cmf::diff {

enum class DiffKind { Exact, Stencil };

/// How input derivatives of a network are obtained.
///
/// Exact propagates first and second input derivatives through each layer in
/// closed form. Stencil uses central differences of plain evaluations, so its
/// result is differentiable w.r.t. parameters with first-order reverse mode
/// only. `step` is used for first derivatives, `hessian_step` for second.
struct DiffMode {
  DiffKind kind = DiffKind::Exact;
  double step = 1e-3;
  double hessian_step = 1e-2;

  static DiffMode exact() { return {}; }
  static DiffMode stencil(double step) { return {DiffKind::Stencil, step, step}; }
  static DiffMode stencil(double step, double hessian_step) {
    return {DiffKind::Stencil, step, hessian_step};
  }

  /// Throws ArgumentError unless both steps lie in [1e-6, 1e-1].
  void validate() const;
};

/// Batched value of a vector function together with its input derivatives.
///
/// `value` is [B x n]. `d1[i]` holds d value / d z_i. `d2` holds the second
/// derivatives for i <= j in the order given by pair_index(). Order 0 jets
/// carry only the value.
struct Jet {
  Var value;
  std::vector<Var> d1;
  std::vector<Var> d2;

  int order() const { return d2.empty() ? (d1.empty() ? 0 : 1) : 2; }
  std::size_t input_dim() const { return d1.size(); }
  /// d^2 value / dz_i dz_j for any i, j.
  Var second(std::size_t i, std::size_t j) const;
};

/// Position of (i, j), i <= j, in the packed upper triangle of a dim x dim matrix.
std::size_t pair_index(std::size_t i, std::size_t j, std::size_t dim);

/// Jet of the identity map at the rows of z: d1[i] is the i-th unit column.
Jet seed(Var z, int order);
/// Order-0 jet.
Jet primal(Var z);

/// x * weight + bias, with weight [n x m] and bias [1 x m].
Jet affine(const Jet& x, Var weight, Var bias);
Jet activate(const Jet& x, const Activation& act);
Jet operator+(const Jet& a, const Jet& b);
Jet operator-(const Jet& a, const Jet& b);
/// Elementwise product with the Leibniz rule.
Jet operator*(const Jet& a, const Jet& b);
Jet scale(const Jet& a, double c);
Jet column(const Jet& a, std::size_t j);
Jet hconcat(std::span<const Jet> parts);

/// Vector function written against jets; must accept jets of any order.
using VectorFn = std::function<Jet(const Jet&)>;

/// Value and input derivatives (up to `order`) of f at every row of z.
Jet differentiate(const VectorFn& f, Var z, const DiffMode& mode, int order);

/// d f_i / d z_j at a single point, shape [d_out x d_in].
Tensor input_jacobian(const VectorFn& f, const Tensor& z, const DiffMode& mode);
/// d^2 f_k / d z_i d z_j at a single point, shape [d_out x d_in x d_in].
Tensor input_hessian(const VectorFn& f, const Tensor& z, const DiffMode& mode);

}  // namespace cmf::diff
