#pragma once

#include <string>

namespace cmf::diff {

enum class ActivationKind { Identity, Elu, Softplus };

/// Pointwise nonlinearity with closed-form derivatives up to third order.
///
/// ELU(alpha) is C1 when alpha == 1 but its second derivative jumps at 0
/// (alpha * e^0 from the left, 0 from the right). Derivatives at exactly 0
/// take the left-hand value. Softplus is smooth everywhere.
struct Activation {
  ActivationKind kind = ActivationKind::Elu;
  double alpha = 1.0;

  static Activation identity() { return {ActivationKind::Identity, 1.0}; }
  static Activation elu(double alpha = 1.0) { return {ActivationKind::Elu, alpha}; }
  static Activation softplus() { return {ActivationKind::Softplus, 1.0}; }

  /// `order`-th derivative at x, order in [0, 3].
  double eval(double x, int order) const;

  std::string name() const;

  friend bool operator==(const Activation&, const Activation&) = default;
};

/// Parses "elu", "softplus", "identity". Throws ArgumentError otherwise.
ActivationKind parse_activation_kind(const std::string& name);

double logistic(double x);

}  // namespace cmf::diff
