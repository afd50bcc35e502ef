#include "cmf/geom.hpp"

#include <cmath>
#include <string>

#include "cmf/errors.hpp"
#include "cmf/mlp.hpp"

namespace cmf::geom {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + diff::shape_string(a.shape()) + " and " +
                         diff::shape_string(b.shape()) + " differ");
  }
}

void require_jets(const Jet& a, const Jet& b, int order, const char* op) {
  if (a.order() < order || b.order() < order || a.input_dim() != b.input_dim() ||
      a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
    throw DimensionError(std::string(op) + ": jets have mismatched shape or order");
  }
}

}  // namespace

Tensor pullback_metric(const Tensor& J) {
  if (J.rank() != 2) throw DimensionError("pullback_metric: J must be a matrix");
  return diff::matmul(J, J, true, false);
}

GeometryBundle geometry_at(const VectorFn& decoder, const Tensor& z, const DiffMode& mode) {
  GeometryBundle g;
  g.z = z.reshaped(diff::Shape{z.size()});
  g.J = diff::input_jacobian(decoder, g.z, mode);
  g.G = pullback_metric(g.J);
  g.H = diff::input_hessian(decoder, g.z, mode);
  return g;
}

GeometryBundle geometry_at(const net::ModelBundle& bundle, const Tensor& z, const DiffMode& mode) {
  if (z.size() != bundle.latent_dim) throw DimensionError("geometry_at: latent size mismatch");
  return geometry_at(net::as_vector_fn(bundle.decoder.spec, bundle.decoder.params), z, mode);
}

double metric_discrepancy(const Tensor& Ga, const Tensor& Gb) {
  require_same_shape(Ga, Gb, "metric_discrepancy");
  double s = 0.0;
  for (std::size_t i = 0; i < Ga.size(); ++i) s += (Ga[i] - Gb[i]) * (Ga[i] - Gb[i]);
  return std::sqrt(s);
}

double curvature_discrepancy(const Tensor& Ha, const Tensor& Hb) {
  require_same_shape(Ha, Hb, "curvature_discrepancy");
  if (Ha.rank() != 3) throw DimensionError("curvature_discrepancy: expected a rank-3 Hessian stack");
  const std::size_t slice = Ha.extent(1) * Ha.extent(2);
  double total = 0.0;
  for (std::size_t k = 0; k < Ha.extent(0); ++k) {
    double s = 0.0;
    for (std::size_t i = k * slice; i < (k + 1) * slice; ++i) s += (Ha[i] - Hb[i]) * (Ha[i] - Hb[i]);
    total += std::sqrt(s);
  }
  return total;
}

std::vector<Var> metric_entries(const Jet& f) {
  const std::size_t d = f.input_dim();
  std::vector<Var> out;
  out.reserve(d * (d + 1) / 2);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) out.push_back(diff::row_sum(f.d1[i] * f.d1[j]));
  return out;
}

Var metric_discrepancy_rows(const Jet& a, const Jet& b, bool squared) {
  require_jets(a, b, 1, "metric_discrepancy_rows");
  const std::size_t d = a.input_dim();
  const std::vector<Var> ga = metric_entries(a);
  const std::vector<Var> gb = metric_entries(b);
  Var acc{};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      const std::size_t p = diff::pair_index(i, j, d);
      Var term = diff::square(ga[p] - gb[p]);
      if (i != j) term = diff::scale(term, 2.0);
      acc = acc.tape ? acc + term : term;
    }
  }
  return squared ? acc : diff::safe_sqrt(acc);
}

Var curvature_discrepancy_rows(const Jet& a, const Jet& b, bool squared) {
  require_jets(a, b, 2, "curvature_discrepancy_rows");
  const std::size_t d = a.input_dim();
  // Per output column k: sum over the full d x d slice of squared differences.
  Var acc{};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      const std::size_t p = diff::pair_index(i, j, d);
      Var term = diff::square(a.d2[p] - b.d2[p]);
      if (i != j) term = diff::scale(term, 2.0);
      acc = acc.tape ? acc + term : term;
    }
  }
  return diff::row_sum(squared ? acc : diff::safe_sqrt(acc));
}

}  // namespace cmf::geom
