#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cmf/mlp.hpp"
#include "json.hpp"

namespace cmf::net {

struct Mlp {
  MlpSpec spec;
  ParamStore params;

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Architecture choices for a bundle.
struct Architecture {
  std::size_t input_dim = 3;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::vector<std::size_t> classifier_hidden{16};
  Activation activation = Activation::elu();

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Encoder x -> z, decoder z -> x, classifier head z -> logit.
struct ModelBundle {
  Mlp encoder;
  Mlp decoder;
  Mlp classifier;
  std::size_t latent_dim = 2;

  /// Fresh bundle; the three networks draw from seeds derived from `seed`.
  static ModelBundle create(const Architecture& arch, std::uint64_t seed);

  /// Throws DimensionError unless encoder out == decoder in == classifier in
  /// == latent_dim, decoder out == encoder in, and classifier out == 1.
  void validate() const;
  std::size_t input_dim() const { return encoder.spec.input_dim(); }
  std::size_t parameter_count() const;

  /// encoder | decoder | classifier parameters, concatenated.
  std::vector<double> flat() const;
  void assign_flat(const std::vector<double>& values);

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

Tensor encode(const ModelBundle& m, const Tensor& x);
Tensor decode(const ModelBundle& m, const Tensor& z);
/// logistic(classifier(z)); one probability per row (or a rank-0 value for a single point).
Tensor predict(const ModelBundle& m, const Tensor& z);

/// Per-network parameter rows carved out of one flat leaf on a tape.
struct BoundModel {
  const ModelBundle* model = nullptr;
  diff::Var encoder;
  diff::Var decoder;
  diff::Var classifier;

  diff::Var encode(diff::Var x) const;
  diff::Var classify(diff::Var z) const;  // logits
  /// Decoder as a jet function, for input derivatives.
  diff::VectorFn decoder_fn() const;
};

/// `flat` must be a 1 x parameter_count() row laid out like ModelBundle::flat().
BoundModel bind(const ModelBundle& m, diff::Var flat);

// Checkpoint container --------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "cmf-checkpoint";
inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelBundle& m);
ModelBundle bundle_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelBundle model;
  /// Extra sections written by callers (training state, run config). May be null.
  nlohmann::json extras;
};

/// Writes to a temporary sibling then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError if unreadable, FormatError on a wrong format or unknown version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Atomically replaces `path` with `contents`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace cmf::net
