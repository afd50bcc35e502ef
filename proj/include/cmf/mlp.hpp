#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cmf/activation.hpp"
#include "cmf/jet.hpp"
#include "cmf/tensor.hpp"

namespace cmf::net {

using diff::Activation;
using diff::Tensor;

/// Fully connected network: affine layers with `activation` between them.
/// The last layer is always affine only.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation activation = Activation::elu();

  /// Throws ArgumentError for fewer than two widths, zero widths, or a
  /// non-positive ELU alpha.
  void validate() const;
  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  /// sum over layers of (in * out + out)
  std::size_t parameter_count() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Where one layer's parameters live inside a flat store. Weights are stored
/// in x out, row-major, followed by the out biases.
struct LayerOffsets {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

std::vector<LayerOffsets> layer_offsets(const MlpSpec& spec);

struct ParamStore {
  std::vector<double> values;
  std::uint64_t seed = 0;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

/// Glorot-uniform weights, zero biases, from a seeded mt19937_64.
ParamStore init(const MlpSpec& spec, std::uint64_t seed);

/// Plain evaluation. `input` is either one point [d] or a batch [B x d];
/// the result has the matching rank.
Tensor forward(const MlpSpec& spec, const ParamStore& params, const Tensor& input);

/// Tape evaluation with parameters read from a 1 x parameter_count() row.
/// Propagates whatever derivative order `input` carries.
diff::Jet forward(const MlpSpec& spec, diff::Var params, const diff::Jet& input);

/// The network as a jet function over fixed (constant) parameters.
diff::VectorFn as_vector_fn(const MlpSpec& spec, const ParamStore& params);

}  // namespace cmf::net
