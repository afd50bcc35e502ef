#include "cmf/objective.hpp"

#include <cmath>
#include <sstream>

#include "cmf/errors.hpp"
#include "cmf/geom.hpp"
#include "cmf/io_util.hpp"

namespace cmf::obj {
namespace {

using diff::Jet;
using diff::Shape;
using diff::Tape;
using diff::Tensor;

Jet slice_jet(const Jet& j, std::size_t begin, std::size_t count) {
  Jet out{diff::slice_rows(j.value, begin, count), {}, {}};
  for (const Var& v : j.d1) out.d1.push_back(diff::slice_rows(v, begin, count));
  for (const Var& v : j.d2) out.d2.push_back(diff::slice_rows(v, begin, count));
  return out;
}

LossVars build_on_fresh_tape(Tape& tape, const scm::Batch& batch, const net::ModelBundle& bundle,
                             const LossWeights& w, const DiffMode& mode) {
  const Var flat = tape.constant(Tensor::vector(bundle.flat()));
  return build_loss(net::bind(bundle, flat), batch, w, mode);
}

}  // namespace

LossWeights LossWeights::baseline() {
  LossWeights w;
  w.lambda_geo = 0.0;
  w.w_align = 0.0;
  return w;
}

void LossWeights::validate() const {
  for (double v : {lambda_geo, beta, w_recon, w_cls, w_align}) {
    if (!std::isfinite(v) || v < 0.0) throw ArgumentError("loss weights must be finite and >= 0");
  }
}

LossBreakdown LossVars::values() const {
  return {total.value()[0],     recon_mse.value()[0],  cls_bce.value()[0], align.value()[0],
          geo_metric.value()[0], geo_curvature.value()[0], batch_size};
}

LossVars build_loss(const net::BoundModel& model, const scm::Batch& batch, const LossWeights& w,
                    const DiffMode& mode, std::size_t geo_rows, bool with_geometry) {
  w.validate();
  const std::size_t b = batch.size();
  if (b == 0) throw ArgumentError("loss: empty batch");
  if (geo_rows == 0 || geo_rows > b) geo_rows = b;
  if (!with_geometry && w.lambda_geo > 0.0) {
    throw ArgumentError("loss: geometry can only be skipped when lambda_geo is 0");
  }
  Tape& tape = *model.encoder.tape;
  const double inv_b = 1.0 / static_cast<double>(b);

  LossVars out;
  out.batch_size = b;
  const Var x = tape.constant(batch.x);
  const Var z = model.encode(x);
  const Var xr = model.decoder_fn()(diff::primal(z)).value;
  out.recon_mse = diff::scale(diff::sum(diff::square(xr - x)), inv_b);
  out.cls_bce = diff::bce_with_logits(model.classify(z), batch.y);

  const Var z_cf = model.encode(tape.constant(batch.x_cf));
  out.align = diff::scale(diff::sum(diff::square(z - z_cf)), inv_b);

  if (with_geometry) {
    const Var both[] = {diff::slice_rows(z, 0, geo_rows), diff::slice_rows(z_cf, 0, geo_rows)};
    const Jet jet = diff::differentiate(model.decoder_fn(), diff::vconcat(both), mode, 2);
    const Jet ja = slice_jet(jet, 0, geo_rows);
    const Jet jb = slice_jet(jet, geo_rows, geo_rows);
    out.geo_metric = diff::mean(geom::metric_discrepancy_rows(ja, jb, w.geo_squared));
    out.geo_curvature = diff::mean(geom::curvature_discrepancy_rows(ja, jb, w.geo_squared));
  } else {
    out.geo_metric = tape.constant(Tensor(Shape{1, 1}));
    out.geo_curvature = out.geo_metric;
  }

  Var total = tape.constant(Tensor(Shape{1, 1}));
  auto add = [&](double weight, Var term) {
    if (weight > 0.0) total = total + diff::scale(term, weight);
  };
  add(w.w_recon, out.recon_mse);
  add(w.w_cls, out.cls_bce);
  add(w.w_align, out.align);
  if (w.lambda_geo > 0.0) {
    Var geo = out.geo_metric;
    if (w.beta > 0.0) geo = geo + diff::scale(out.geo_curvature, w.beta);
    total = total + diff::scale(geo, w.lambda_geo);
  }
  out.total = total;
  return out;
}

std::pair<double, double> task_loss(const scm::Batch& batch, const net::ModelBundle& bundle) {
  Tape tape;
  const LossBreakdown l =
      build_on_fresh_tape(tape, batch, bundle, LossWeights::baseline(), DiffMode::exact()).values();
  return {l.recon_mse, l.cls_bce};
}

double align_loss(const scm::Batch& batch, const net::ModelBundle& bundle) {
  Tape tape;
  const Var flat = tape.constant(Tensor::vector(bundle.flat()));
  return build_loss(net::bind(bundle, flat), batch, LossWeights::baseline(), DiffMode::exact(), 0,
                    false)
      .align.value()[0];
}

std::pair<double, double> geo_loss(const scm::Batch& batch, const net::ModelBundle& bundle,
                                   const DiffMode& mode, bool squared) {
  Tape tape;
  LossWeights w = LossWeights::baseline();
  w.geo_squared = squared;
  const LossBreakdown l = build_on_fresh_tape(tape, batch, bundle, w, mode).values();
  return {l.geo_metric, l.geo_curvature};
}

LossBreakdown total_loss(const scm::Batch& batch, const net::ModelBundle& bundle,
                         const LossWeights& w, const DiffMode& mode) {
  Tape tape;
  return build_on_fresh_tape(tape, batch, bundle, w, mode).values();
}

LossAndGrad loss_and_grad(const scm::Batch& batch, const net::ModelBundle& bundle,
                          const LossWeights& w, const DiffMode& mode, std::size_t geo_rows,
                          bool with_geometry) {
  Tape tape;
  const Var flat = tape.leaf(Tensor::vector(bundle.flat()));
  const LossVars vars =
      build_loss(net::bind(bundle, flat), batch, w, mode, geo_rows, with_geometry);
  tape.backward(vars.total);
  return {vars.values(), tape.grad(flat).values()};
}

std::string format_log_row(const LogEntry& e) {
  using io::format_double;
  std::ostringstream os;
  os << e.step << ',' << format_double(e.loss.total) << ',' << format_double(e.loss.recon_mse)
     << ',' << format_double(e.loss.cls_bce) << ',' << format_double(e.loss.align) << ','
     << format_double(e.loss.geo_metric) << ',' << format_double(e.loss.geo_curvature);
  return os.str();
}

void write_training_log(const std::filesystem::path& path, const std::vector<LogEntry>& log) {
  std::ostringstream os;
  os << kTrainingLogHeader << '\n';
  for (const LogEntry& e : log) os << format_log_row(e) << '\n';
  net::write_file_atomic(path, os.str());
}

std::vector<LogEntry> read_training_log(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kTrainingLogHeader) {
    throw FormatError(path.string() + ": unexpected training log header");
  }
  std::vector<LogEntry> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto cells = io::split_csv_line(line);
    if (cells.size() != 7) throw FormatError(where + ": expected 7 fields");
    LogEntry e;
    e.step = static_cast<std::size_t>(io::parse_double(cells[0], where));
    e.loss.total = io::parse_double(cells[1], where);
    e.loss.recon_mse = io::parse_double(cells[2], where);
    e.loss.cls_bce = io::parse_double(cells[3], where);
    e.loss.align = io::parse_double(cells[4], where);
    e.loss.geo_metric = io::parse_double(cells[5], where);
    e.loss.geo_curvature = io::parse_double(cells[6], where);
    out.push_back(e);
  }
  return out;
}

}  // namespace cmf::obj
