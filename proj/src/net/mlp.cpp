#include "cmf/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cmf/errors.hpp"

namespace cmf::net {

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ArgumentError("mlp: need at least input and output widths");
  for (auto w : widths) {
    if (w == 0) throw ArgumentError("mlp: layer widths must be positive");
  }
  if (activation.kind == diff::ActivationKind::Elu && !(activation.alpha > 0.0)) {
    throw ArgumentError("mlp: ELU alpha must be positive");
  }
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

std::vector<LayerOffsets> layer_offsets(const MlpSpec& spec) {
  std::vector<LayerOffsets> out;
  std::size_t at = 0;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    LayerOffsets o;
    o.in = spec.widths[l];
    o.out = spec.widths[l + 1];
    o.weight = at;
    o.bias = at + o.in * o.out;
    at = o.bias + o.out;
    out.push_back(o);
  }
  return out;
}

ParamStore init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamStore store;
  store.seed = seed;
  store.values.assign(spec.parameter_count(), 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& layer : layer_offsets(spec)) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
      // 53 random bits -> [0, 1); avoids implementation-defined distributions.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      store.values[layer.weight + i] = (2.0 * u - 1.0) * limit;
    }
  }
  return store;
}

diff::Jet forward(const MlpSpec& spec, diff::Var params, const diff::Jet& input) {
  if (params.cols() != spec.parameter_count() || params.rows() != 1) {
    throw DimensionError("mlp: parameter row has " + std::to_string(params.value().size()) +
                         " values, spec needs " + std::to_string(spec.parameter_count()));
  }
  if (input.value.cols() != spec.input_dim()) {
    throw DimensionError("mlp: input width " + std::to_string(input.value.cols()) +
                         " does not match spec input " + std::to_string(spec.input_dim()));
  }
  const auto layers = layer_offsets(spec);
  diff::Jet x = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& o = layers[l];
    diff::Var w = diff::view(params, o.weight, o.in, o.out);
    diff::Var b = diff::view(params, o.bias, 1, o.out);
    x = diff::affine(x, w, b);
    if (l + 1 < layers.size()) x = diff::activate(x, spec.activation);
  }
  return x;
}

Tensor forward(const MlpSpec& spec, const ParamStore& params, const Tensor& input) {
  spec.validate();
  if (params.values.size() != spec.parameter_count()) {
    throw DimensionError("mlp: parameter store does not match spec");
  }
  const bool single = input.rank() == 1;
  if (!single && input.rank() != 2) throw DimensionError("mlp: input must be rank 1 or 2");
  diff::Tape tape;
  diff::Var p = tape.constant(Tensor(diff::Shape{1, params.values.size()}, params.values));
  diff::Var x = tape.constant(input);
  Tensor out = forward(spec, p, diff::primal(x)).value.value();
  if (single) return out.reshaped(diff::Shape{out.size()});
  return out;
}

diff::VectorFn as_vector_fn(const MlpSpec& spec, const ParamStore& params) {
  spec.validate();
  return [spec, params](const diff::Jet& z) {
    diff::Tape& t = *z.value.tape;
    diff::Var p = t.constant(Tensor(diff::Shape{1, params.values.size()}, params.values));
    return forward(spec, p, z);
  };
}

}  // namespace cmf::net
