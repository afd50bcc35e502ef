#include "cmf/model.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "cmf/errors.hpp"

namespace cmf::net {
namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t role) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), role};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden,
                               std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

ModelBundle ModelBundle::create(const Architecture& arch, std::uint64_t seed) {
  ModelBundle m;
  m.latent_dim = arch.latent_dim;
  m.encoder.spec = {chain(arch.input_dim, arch.hidden, arch.latent_dim), arch.activation};
  std::vector<std::size_t> reversed(arch.hidden.rbegin(), arch.hidden.rend());
  m.decoder.spec = {chain(arch.latent_dim, reversed, arch.input_dim), arch.activation};
  m.classifier.spec = {chain(arch.latent_dim, arch.classifier_hidden, 1), arch.activation};
  m.encoder.params = init(m.encoder.spec, derive_seed(seed, 1));
  m.decoder.params = init(m.decoder.spec, derive_seed(seed, 2));
  m.classifier.params = init(m.classifier.spec, derive_seed(seed, 3));
  m.validate();
  return m;
}

void ModelBundle::validate() const {
  for (const Mlp* n : {&encoder, &decoder, &classifier}) {
    n->spec.validate();
    if (n->params.values.size() != n->spec.parameter_count()) {
      throw DimensionError("bundle: parameter store does not match its spec");
    }
  }
  if (encoder.spec.output_dim() != latent_dim || decoder.spec.input_dim() != latent_dim ||
      classifier.spec.input_dim() != latent_dim) {
    throw DimensionError("bundle: latent dimensions disagree");
  }
  if (decoder.spec.output_dim() != encoder.spec.input_dim()) {
    throw DimensionError("bundle: decoder output must match encoder input");
  }
  if (classifier.spec.output_dim() != 1) throw DimensionError("bundle: classifier must emit one logit");
}

std::size_t ModelBundle::parameter_count() const {
  return encoder.params.values.size() + decoder.params.values.size() +
         classifier.params.values.size();
}

std::vector<double> ModelBundle::flat() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Mlp* n : {&encoder, &decoder, &classifier})
    out.insert(out.end(), n->params.values.begin(), n->params.values.end());
  return out;
}

void ModelBundle::assign_flat(const std::vector<double>& values) {
  if (values.size() != parameter_count()) throw DimensionError("bundle: flat size mismatch");
  auto it = values.begin();
  for (Mlp* n : {&encoder, &decoder, &classifier}) {
    const auto count = static_cast<std::ptrdiff_t>(n->params.values.size());
    std::copy(it, it + count, n->params.values.begin());
    it += count;
  }
}

Tensor encode(const ModelBundle& m, const Tensor& x) {
  return forward(m.encoder.spec, m.encoder.params, x);
}

Tensor decode(const ModelBundle& m, const Tensor& z) {
  return forward(m.decoder.spec, m.decoder.params, z);
}

Tensor predict(const ModelBundle& m, const Tensor& z) {
  Tensor logits = forward(m.classifier.spec, m.classifier.params, z);
  Tensor p = logits;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = diff::logistic(logits[i]);
  if (z.rank() == 1) return Tensor::scalar(p[0]);
  return p.reshaped(diff::Shape{p.size()});
}

diff::Var BoundModel::encode(diff::Var x) const {
  return forward(model->encoder.spec, encoder, diff::primal(x)).value;
}

diff::Var BoundModel::classify(diff::Var z) const {
  return forward(model->classifier.spec, classifier, diff::primal(z)).value;
}

diff::VectorFn BoundModel::decoder_fn() const {
  const MlpSpec spec = model->decoder.spec;
  const diff::Var params = decoder;
  return [spec, params](const diff::Jet& z) { return forward(spec, params, z); };
}

BoundModel bind(const ModelBundle& m, diff::Var flat) {
  if (flat.rows() != 1 || flat.cols() != m.parameter_count()) {
    throw DimensionError("bind: flat parameter row has the wrong size");
  }
  const std::size_t ne = m.encoder.params.values.size();
  const std::size_t nd = m.decoder.params.values.size();
  const std::size_t nc = m.classifier.params.values.size();
  BoundModel b;
  b.model = &m;
  b.encoder = diff::view(flat, 0, 1, ne);
  b.decoder = diff::view(flat, ne, 1, nd);
  b.classifier = diff::view(flat, ne + nd, 1, nc);
  return b;
}

nlohmann::json to_json(const MlpSpec& spec) {
  return {{"widths", spec.widths},
          {"activation", spec.activation.name()},
          {"alpha", spec.activation.alpha}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.activation.kind = diff::parse_activation_kind(j.at("activation").get<std::string>());
  s.activation.alpha = j.at("alpha").get<double>();
  s.validate();
  return s;
}

nlohmann::json to_json(const ModelBundle& m) {
  auto net = [](const Mlp& n) {
    return nlohmann::json{
        {"spec", to_json(n.spec)}, {"seed", n.params.seed}, {"params", n.params.values}};
  };
  return {{"latent_dim", m.latent_dim},
          {"encoder", net(m.encoder)},
          {"decoder", net(m.decoder)},
          {"classifier", net(m.classifier)}};
}

ModelBundle bundle_from_json(const nlohmann::json& j) {
  auto net = [](const nlohmann::json& n) {
    Mlp out;
    out.spec = spec_from_json(n.at("spec"));
    out.params.seed = n.at("seed").get<std::uint64_t>();
    out.params.values = n.at("params").get<std::vector<double>>();
    return out;
  };
  ModelBundle m;
  m.latent_dim = j.at("latent_dim").get<std::size_t>();
  m.encoder = net(j.at("encoder"));
  m.decoder = net(j.at("decoder"));
  m.classifier = net(j.at("classifier"));
  m.validate();
  return m;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["model"] = to_json(ckpt.model);
  j["extras"] = ckpt.extras;
  write_file_atomic(path, j.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) {
    throw FormatError(path.string() + " is not a cmf checkpoint");
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version in " + path.string());
  }
  Checkpoint c;
  try {
    c.model = bundle_from_json(j.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  c.extras = j.value("extras", nlohmann::json());
  return c;
}

}  // namespace cmf::net
