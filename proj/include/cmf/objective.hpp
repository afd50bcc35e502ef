#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cmf/jet.hpp"
#include "cmf/model.hpp"
#include "cmf/scm.hpp"

namespace cmf::obj {

using diff::DiffMode;
using diff::Var;

struct LossWeights {
  double lambda_geo = 0.1;
  double beta = 0.5;
  double w_recon = 1.0;
  double w_cls = 1.0;
  double w_align = 1.0;
  /// Square the per-sample Frobenius norms of the geometric term.
  bool geo_squared = false;

  /// Same task weights with the alignment and geometric terms switched off.
  static LossWeights baseline();
  /// Throws ArgumentError on negative or non-finite weights.
  void validate() const;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossBreakdown {
  double total = 0.0;
  double recon_mse = 0.0;
  double cls_bce = 0.0;
  double align = 0.0;
  double geo_metric = 0.0;
  double geo_curvature = 0.0;
  std::size_t batch_size = 0;
};

/// Every loss component as a 1x1 node on one tape.
struct LossVars {
  Var total, recon_mse, cls_bce, align, geo_metric, geo_curvature;
  std::size_t batch_size = 0;

  LossBreakdown values() const;
};

/// Builds all loss terms for `batch` on the tape that owns `model`'s
/// parameters. The geometric terms use the first `geo_rows` rows of the batch
/// (all rows when 0). Terms with zero weight are still evaluated for the
/// breakdown but do not enter `total`, so their parameters get no gradient.
/// With `with_geometry == false` the geometric terms are skipped entirely and
/// reported as 0; that is only allowed when lambda_geo == 0.
LossVars build_loss(const net::BoundModel& model, const scm::Batch& batch, const LossWeights& w,
                    const DiffMode& mode, std::size_t geo_rows = 0, bool with_geometry = true);

/// (recon_mse, cls_bce)
std::pair<double, double> task_loss(const scm::Batch& batch, const net::ModelBundle& bundle);
double align_loss(const scm::Batch& batch, const net::ModelBundle& bundle);
/// (geo_metric, geo_curvature); `squared` selects the squared-norm variant.
std::pair<double, double> geo_loss(const scm::Batch& batch, const net::ModelBundle& bundle,
                                   const DiffMode& mode, bool squared = false);
LossBreakdown total_loss(const scm::Batch& batch, const net::ModelBundle& bundle,
                         const LossWeights& w, const DiffMode& mode);

struct LossAndGrad {
  LossBreakdown loss;
  std::vector<double> grad;  // flat, in ModelBundle::flat() order
};

/// Loss breakdown plus d total / d parameters.
LossAndGrad loss_and_grad(const scm::Batch& batch, const net::ModelBundle& bundle,
                          const LossWeights& w, const DiffMode& mode, std::size_t geo_rows = 0,
                          bool with_geometry = true);

/// Training log rows: step, total, recon_mse, cls_bce, align, geo_metric, geo_curvature.
struct LogEntry {
  std::size_t step = 0;
  LossBreakdown loss;
};

inline constexpr const char* kTrainingLogHeader =
    "step,total,recon_mse,cls_bce,align,geo_metric,geo_curvature";
std::string format_log_row(const LogEntry& e);
void write_training_log(const std::filesystem::path& path, const std::vector<LogEntry>& log);
std::vector<LogEntry> read_training_log(const std::filesystem::path& path);

}  // namespace cmf::obj
