#pragma once

#include "cmf/jet.hpp"
#include "cmf/model.hpp"
#include "cmf/tensor.hpp"

namespace cmf::geom {

using diff::DiffMode;
using diff::Jet;
using diff::Tensor;
using diff::Var;
using diff::VectorFn;

/// Decoder geometry at one latent point.
struct GeometryBundle {
  Tensor z;  // [d_z]
  Tensor J;  // [d_x x d_z]
  Tensor G;  // [d_z x d_z], J^T J
  Tensor H;  // [d_x x d_z x d_z]
};

/// J^T J. Throws DimensionError unless J is rank 2.
Tensor pullback_metric(const Tensor& J);

GeometryBundle geometry_at(const VectorFn& decoder, const Tensor& z, const DiffMode& mode);
GeometryBundle geometry_at(const net::ModelBundle& bundle, const Tensor& z, const DiffMode& mode);

/// ||Ga - Gb||_F
double metric_discrepancy(const Tensor& Ga, const Tensor& Gb);
/// sum_k ||Ha[k] - Hb[k]||_F
double curvature_discrepancy(const Tensor& Ha, const Tensor& Hb);

// Row-wise versions on the tape. `a` and `b` are decoder jets over the same
// number of rows; results are [B x 1]. With `squared` the per-row norms are
// returned squared (for the metric) or as squared per-slice norms summed over
// output coordinates (for the curvature).

/// Pullback metric entries G_ij for i <= j, packed like Jet::d2, each [B x 1].
std::vector<Var> metric_entries(const Jet& f);
Var metric_discrepancy_rows(const Jet& a, const Jet& b, bool squared = false);
Var curvature_discrepancy_rows(const Jet& a, const Jet& b, bool squared = false);

}  // namespace cmf::geom
