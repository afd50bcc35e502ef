#include "cmf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "cmf/rng.hpp"

namespace cmf::train {
namespace {

constexpr const char* kTrainKind = "cmf-train";

nlohmann::json mode_to_json(const diff::DiffMode& m) {
  return {{"kind", m.kind == diff::DiffKind::Exact ? "exact" : "stencil"},
          {"step", m.step},
          {"hessian_step", m.hessian_step}};
}

diff::DiffMode mode_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  diff::DiffMode m;
  if (kind == "exact") {
    m.kind = diff::DiffKind::Exact;
  } else if (kind == "stencil") {
    m.kind = diff::DiffKind::Stencil;
  } else {
    throw FormatError("unknown derivative mode '" + kind + "'");
  }
  m.step = j.at("step").get<double>();
  m.hessian_step = j.at("hessian_step").get<double>();
  return m;
}

nlohmann::json loss_to_json(const LossBreakdown& l) {
  return {l.total, l.recon_mse, l.cls_bce, l.align, l.geo_metric, l.geo_curvature, l.batch_size};
}

LossBreakdown loss_from_json(const nlohmann::json& j) {
  LossBreakdown l;
  l.total = j.at(0).get<double>();
  l.recon_mse = j.at(1).get<double>();
  l.cls_bce = j.at(2).get<double>();
  l.align = j.at(3).get<double>();
  l.geo_metric = j.at(4).get<double>();
  l.geo_curvature = j.at(5).get<double>();
  l.batch_size = j.at(6).get<std::size_t>();
  return l;
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void TrainConfig::validate(std::size_t train_size) const {
  if (epochs == 0) throw ArgumentError("epochs must be positive");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (train_size > 0 && batch_size > train_size) {
    throw ArgumentError("batch_size " + std::to_string(batch_size) + " exceeds training-set size " +
                        std::to_string(train_size));
  }
  if (!(learning_rate >= 0.0 && learning_rate < 1.0)) {
    throw ArgumentError("learning_rate must lie in [0, 1)");
  }
  if (!(geo_subsample > 0.0 && geo_subsample <= 1.0)) {
    throw ArgumentError("geo_subsample must lie in (0, 1]");
  }
  const OptimizerConfig& o = optimizer;
  if (o.kind == OptimizerKind::Adam) {
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0) || !(o.eps > 0.0)) {
      throw ArgumentError("Adam needs beta1, beta2 in [0, 1) and eps > 0");
    }
  } else if (!(o.momentum >= 0.0 && o.momentum < 1.0)) {
    throw ArgumentError("SGD momentum must lie in [0, 1)");
  }
  weights.validate();
  geometry_mode.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  const OptimizerConfig& o = c.optimizer;
  const LossWeights& w = c.weights;
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"optimizer",
           {{"kind", o.kind == OptimizerKind::Adam ? "adam" : "sgd"},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"momentum", o.momentum}}},
          {"seed", c.seed},
          {"weights",
           {{"lambda_geo", w.lambda_geo},
            {"beta", w.beta},
            {"w_recon", w.w_recon},
            {"w_cls", w.w_cls},
            {"w_align", w.w_align},
            {"geo_squared", w.geo_squared}}},
          {"geometry_mode", mode_to_json(c.geometry_mode)},
          {"geo_subsample", c.geo_subsample},
          {"log_geometry", c.log_geometry}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    const auto& o = j.at("optimizer");
    const std::string kind = o.at("kind").get<std::string>();
    if (kind != "adam" && kind != "sgd") throw FormatError("unknown optimizer '" + kind + "'");
    c.optimizer.kind = kind == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
    c.optimizer.beta1 = o.at("beta1").get<double>();
    c.optimizer.beta2 = o.at("beta2").get<double>();
    c.optimizer.eps = o.at("eps").get<double>();
    c.optimizer.momentum = o.at("momentum").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& w = j.at("weights");
    c.weights.lambda_geo = w.at("lambda_geo").get<double>();
    c.weights.beta = w.at("beta").get<double>();
    c.weights.w_recon = w.at("w_recon").get<double>();
    c.weights.w_cls = w.at("w_cls").get<double>();
    c.weights.w_align = w.at("w_align").get<double>();
    c.weights.geo_squared = w.at("geo_squared").get<bool>();
    c.geometry_mode = mode_from_json(j.at("geometry_mode"));
    c.geo_subsample = j.at("geo_subsample").get<double>();
    c.log_geometry = j.at("log_geometry").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

void apply_update(std::vector<double>& params, const std::vector<double>& grad,
                  OptimizerState& state, const OptimizerConfig& opt, double lr) {
  if (grad.size() != params.size()) throw DimensionError("optimizer: gradient size mismatch");
  if (state.m.empty()) state.m.assign(params.size(), 0.0);
  if (opt.kind == OptimizerKind::Adam && state.v.empty()) state.v.assign(params.size(), 0.0);
  ++state.t;
  if (opt.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = opt.momentum * state.m[i] + grad[i];
      params[i] -= lr * state.m[i];
    }
    return;
  }
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grad[i];
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

LossBreakdown train_step(const scm::Batch& batch, TrainState& state, const TrainConfig& config,
                         net::ModelBundle& bundle) {
  const std::size_t b = batch.size();
  const auto geo_rows = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.geo_subsample * static_cast<double>(b))));
  const bool with_geometry = config.weights.lambda_geo > 0.0 || config.log_geometry;

  obj::LossAndGrad lg;
  try {
    lg = obj::loss_and_grad(batch, bundle, config.weights, config.geometry_mode, geo_rows,
                            with_geometry);
  } catch (const NumericError& e) {
    throw TrainingDiverged("step " + std::to_string(state.step + 1) + ": " + e.what());
  }
  if (!all_finite(lg.grad)) {
    throw TrainingDiverged("step " + std::to_string(state.step + 1) + ": non-finite gradient");
  }

  std::vector<double> params = bundle.flat();
  OptimizerState next = state.optimizer;
  apply_update(params, lg.grad, next, config.optimizer, config.learning_rate);
  if (!all_finite(params) || !all_finite(next.m) || !all_finite(next.v)) {
    throw TrainingDiverged("step " + std::to_string(state.step + 1) +
                           ": update produced non-finite parameters");
  }
  bundle.assign_flat(params);
  state.optimizer = std::move(next);
  ++state.step;
  return lg.loss;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(rng::derive_seed(seed, epoch));
  rng::shuffle(std::span<std::size_t>(order), gen);
  return order;
}

LossBreakdown validation_loss(const net::ModelBundle& bundle,
                              const std::vector<scm::SampleRecord>& records,
                              const TrainConfig& config) {
  diff::Tape tape;
  const diff::Var flat = tape.constant(diff::Tensor::vector(bundle.flat()));
  return obj::build_loss(net::bind(bundle, flat), scm::make_batch(records), config.weights,
                         config.geometry_mode, 0, config.weights.lambda_geo > 0.0)
      .values();
}

Trainer::Trainer(TrainConfig config, const scm::DatasetSplit& data, net::ModelBundle initial)
    : config_(std::move(config)), data_(&data), model_(std::move(initial)) {
  config_.validate(data.train.size());
  model_.validate();
  if (model_.encoder.spec.input_dim() != 3) throw DimensionError("trainer: model must take 3-D inputs");
  if (data.train.empty() || data.validation.empty()) {
    throw ArgumentError("trainer: need non-empty train and validation splits");
  }
  order_ = epoch_order(config_.seed, 0, data.train.size());
}

LossBreakdown Trainer::step() {
  if (done()) throw ArgumentError("trainer: all epochs already completed");
  const std::size_t n = order_.size();
  const std::size_t count = std::min(config_.batch_size, n - state_.cursor);
  const std::span<const std::size_t> idx(order_.data() + state_.cursor, count);
  const scm::Batch batch = scm::make_batch(data_->train, idx);
  const LossBreakdown loss = train_step(batch, state_, config_, model_);
  log_.push_back({state_.step, loss});
  state_.cursor += count;
  if (state_.cursor >= n) end_epoch();
  return loss;
}

void Trainer::end_epoch() {
  LossBreakdown val;
  try {
    val = validation_loss(model_, data_->validation, config_);
  } catch (const NumericError& e) {
    throw TrainingDiverged(std::string("validation: ") + e.what());
  }
  if (val.total < state_.best_validation) {
    state_.best_validation = val.total;
    state_.best_epoch = state_.epoch + 1;
    state_.best_params = model_.flat();
  }
  ++state_.epoch;
  state_.cursor = 0;
  order_ = epoch_order(config_.seed, state_.epoch, data_->train.size());
  last_validation_ = val;
}

void Trainer::run(const TrainOptions& options, std::size_t max_steps) {
  std::size_t taken = 0;
  try {
    while (!done() && taken < max_steps) {
      const std::size_t epoch_before = state_.epoch;
      step();
      ++taken;
      if (state_.epoch != epoch_before) {
        if (options.on_epoch) options.on_epoch(state_.epoch, *last_validation_);
        if (options.checkpoint_path && options.checkpoint_every > 0 &&
            state_.epoch % options.checkpoint_every == 0) {
          save(*options.checkpoint_path);
        }
      }
    }
  } catch (const TrainingDiverged&) {
    // step() is atomic, so the current state is the last finite one.
    if (options.checkpoint_path) save(*options.checkpoint_path);
    if (options.log_path) obj::write_training_log(*options.log_path, log_);
    throw;
  }
  if (options.checkpoint_path) save(*options.checkpoint_path);
  if (options.log_path) obj::write_training_log(*options.log_path, log_);
}

net::ModelBundle Trainer::best_model() const {
  net::ModelBundle out = model_;
  if (!state_.best_params.empty()) out.assign_flat(state_.best_params);
  return out;
}

void Trainer::save(const std::filesystem::path& path) const {
  nlohmann::json log = nlohmann::json::array();
  for (const LogEntry& e : log_) log.push_back({e.step, loss_to_json(e.loss)});
  nlohmann::json state{{"step", state_.step},
                       {"epoch", state_.epoch},
                       {"cursor", state_.cursor},
                       {"optimizer_t", state_.optimizer.t},
                       {"optimizer_m", state_.optimizer.m},
                       {"optimizer_v", state_.optimizer.v},
                       {"best_epoch", state_.best_epoch},
                       {"best_params", state_.best_params}};
  // JSON has no infinity; an absent value means no epoch has finished.
  if (std::isfinite(state_.best_validation)) state["best_validation"] = state_.best_validation;
  nlohmann::json extras{{"kind", kTrainKind},
                        {"config", to_json(config_)},
                        {"data", {{"seed", data_->seed}, {"n", data_->size()}}},
                        {"state", state},
                        {"log", log}};
  if (!state_.best_params.empty()) {
    extras["best_model"] = net::to_json(best_model());
  }
  net::save_checkpoint(path, {model_, extras});
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, const scm::DatasetSplit& data) {
  const net::Checkpoint ckpt = net::load_checkpoint(checkpoint);
  const nlohmann::json& x = ckpt.extras;
  if (!x.is_object() || x.value("kind", "") != kTrainKind) {
    throw FormatError(checkpoint.string() + " holds no training state");
  }
  Trainer t(config_from_json(x.at("config")), data, ckpt.model);
  try {
    if (x.at("data").at("seed").get<std::uint64_t>() != data.seed ||
        x.at("data").at("n").get<std::size_t>() != data.size()) {
      throw ArgumentError("checkpoint was trained on a different dataset");
    }
    const auto& s = x.at("state");
    t.state_.step = s.at("step").get<std::size_t>();
    t.state_.epoch = s.at("epoch").get<std::size_t>();
    t.state_.cursor = s.at("cursor").get<std::size_t>();
    t.state_.optimizer.t = s.at("optimizer_t").get<std::size_t>();
    t.state_.optimizer.m = s.at("optimizer_m").get<std::vector<double>>();
    t.state_.optimizer.v = s.at("optimizer_v").get<std::vector<double>>();
    t.state_.best_epoch = s.at("best_epoch").get<std::size_t>();
    t.state_.best_params = s.at("best_params").get<std::vector<double>>();
    if (s.contains("best_validation")) t.state_.best_validation = s.at("best_validation").get<double>();
    for (const auto& e : x.at("log")) t.log_.push_back({e.at(0).get<std::size_t>(), loss_from_json(e.at(1))});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed training state in " + checkpoint.string() + ": " + e.what());
  }
  if (t.state_.cursor >= data.train.size()) throw FormatError("checkpoint cursor out of range");
  t.order_ = epoch_order(t.config_.seed, t.state_.epoch, data.train.size());
  return t;
}

TrainResult train(const TrainConfig& config, const scm::DatasetSplit& data,
                  const net::ModelBundle& initial, const TrainOptions& options) {
  Trainer t(config, data, initial);
  t.run(options);
  return {t.best_model(), t.model(), t.log(), t.state()};
}

}  // namespace cmf::train
