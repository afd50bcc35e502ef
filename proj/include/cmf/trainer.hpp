#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "cmf/errors.hpp"
#include "cmf/jet.hpp"
#include "cmf/model.hpp"
#include "cmf/objective.hpp"
#include "cmf/scm.hpp"
#include "json.hpp"

namespace cmf::train {

using obj::LogEntry;
using obj::LossBreakdown;
using obj::LossWeights;

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // Sgd only

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  OptimizerConfig optimizer;
  std::uint64_t seed = 7;
  LossWeights weights;
  diff::DiffMode geometry_mode = diff::DiffMode::stencil(1e-3, 1e-2);
  /// Fraction of each batch used for the geometric terms.
  double geo_subsample = 0.25;
  /// Evaluate the geometric terms for the log even when lambda_geo is 0.
  bool log_geometry = true;

  /// Throws ArgumentError. `train_size` of 0 skips the batch-size bound.
  void validate(std::size_t train_size = 0) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig config_from_json(const nlohmann::json& j);

struct OptimizerState {
  std::size_t t = 0;
  std::vector<double> m;  // first moment (Adam) or velocity (Sgd)
  std::vector<double> v;  // second moment (Adam)
};

struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;   // epochs completed
  std::size_t cursor = 0;  // position within the current epoch's permutation
  OptimizerState optimizer;
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<double> best_params;
};

/// Raised when a step produces a non-finite loss, gradient or parameter.
class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Applies one optimizer update in place. `lr == 0` leaves params untouched.
void apply_update(std::vector<double>& params, const std::vector<double>& grad,
                  OptimizerState& state, const OptimizerConfig& opt, double lr);

/// One update from the gradient of total_loss on `batch`.
LossBreakdown train_step(const scm::Batch& batch, TrainState& state, const TrainConfig& config,
                         net::ModelBundle& bundle);

/// Permutation of [0, n) used for `epoch`; depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

struct TrainOptions {
  /// Written every `checkpoint_every` epochs, at the end, and on divergence.
  std::optional<std::filesystem::path> checkpoint_path;
  std::size_t checkpoint_every = 10;
  std::optional<std::filesystem::path> log_path;
  /// Called after every completed epoch with (epoch, validation loss).
  std::function<void(std::size_t, const LossBreakdown&)> on_epoch;
};

/// Resumable training loop over one dataset.
class Trainer {
 public:
  Trainer(TrainConfig config, const scm::DatasetSplit& data, net::ModelBundle initial);
  /// Restores model, state and log from a checkpoint written by save().
  static Trainer resume(const std::filesystem::path& checkpoint, const scm::DatasetSplit& data);

  bool done() const { return state_.epoch >= config_.epochs; }
  /// One mini-batch; finishes the epoch (validation, best snapshot) when the
  /// permutation is exhausted.
  LossBreakdown step();
  /// Steps until `done()` or until `max_steps` more steps were taken.
  void run(const TrainOptions& options = {}, std::size_t max_steps = SIZE_MAX);

  void save(const std::filesystem::path& path) const;

  const TrainConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  const net::ModelBundle& model() const { return model_; }
  const std::vector<LogEntry>& log() const { return log_; }
  /// Best-validation parameters, or the current ones before any epoch ends.
  net::ModelBundle best_model() const;

 private:
  void end_epoch();

  TrainConfig config_;
  const scm::DatasetSplit* data_;
  net::ModelBundle model_;
  TrainState state_;
  std::vector<LogEntry> log_;
  std::vector<std::size_t> order_;
  std::optional<LossBreakdown> last_validation_;
};

/// Loss on a whole split (geometry included iff lambda_geo > 0).
LossBreakdown validation_loss(const net::ModelBundle& bundle,
                              const std::vector<scm::SampleRecord>& records,
                              const TrainConfig& config);

struct TrainResult {
  net::ModelBundle best;
  net::ModelBundle last;
  std::vector<LogEntry> log;
  TrainState state;
};

TrainResult train(const TrainConfig& config, const scm::DatasetSplit& data,
                  const net::ModelBundle& initial, const TrainOptions& options = {});

}  // namespace cmf::train
