#include "cmf/activation.hpp"

#include <cmath>

#include "cmf/errors.hpp"

namespace cmf::diff {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double Activation::eval(double x, int order) const {
  switch (kind) {
    case ActivationKind::Identity:
      return order == 0 ? x : (order == 1 ? 1.0 : 0.0);
    case ActivationKind::Elu:
      if (x > 0.0) return order == 0 ? x : (order == 1 ? 1.0 : 0.0);
      return order == 0 ? alpha * std::expm1(x) : alpha * std::exp(x);
    case ActivationKind::Softplus: {
      if (order == 0) return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      const double s = logistic(x);
      if (order == 1) return s;
      if (order == 2) return s * (1.0 - s);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
  }
  return 0.0;
}

std::string Activation::name() const {
  switch (kind) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::Elu: return "elu";
    case ActivationKind::Softplus: return "softplus";
  }
  return "?";
}

ActivationKind parse_activation_kind(const std::string& name) {
  if (name == "elu") return ActivationKind::Elu;
  if (name == "softplus") return ActivationKind::Softplus;
  if (name == "identity") return ActivationKind::Identity;
  throw ArgumentError("unknown activation '" + name + "'");
}

}  // namespace cmf::diff
