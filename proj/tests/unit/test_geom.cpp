#include <cmath>
#include <random>

#include "cmf/errors.hpp"
#include "cmf/geom.hpp"
#include "cmf/mlp.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cmf::geom;
using cmf::diff::Shape;
using cmf::net::Architecture;
using cmf::net::ModelBundle;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  Tensor t(shape);
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

/// Symmetric Hessian stack with random entries.
Tensor random_hessian(std::mt19937_64& rng, std::size_t dx, std::size_t dz) {
  Tensor h(Shape{dx, dz, dz});
  std::normal_distribution<double> n;
  for (std::size_t k = 0; k < dx; ++k)
    for (std::size_t i = 0; i < dz; ++i)
      for (std::size_t j = i; j < dz; ++j) h.at(k, i, j) = h.at(k, j, i) = n(rng);
  return h;
}

/// Smaller eigenvalue of a symmetric 2x2 matrix.
double min_eig2(const Tensor& g) {
  const double tr = g(0, 0) + g(1, 1);
  const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
  return 0.5 * tr - std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
}

}  // namespace

TEST_CASE("pullback_metric examples") {
  CHECK(pullback_metric(Tensor::identity(2)) == Tensor::identity(2));
  CHECK(pullback_metric(Tensor::matrix({{2, 0}, {0, 3}, {0, 0}})) == Tensor::matrix({{4, 0}, {0, 9}}));
  const double c = std::cos(0.7), s = std::sin(0.7);
  const Tensor rot = Tensor::matrix({{c, -s}, {s, c}, {0, 0}});
  CHECK(cmf::diff::max_abs_diff(pullback_metric(rot), Tensor::identity(2)) < 1e-15);
  CHECK_THROWS_AS(pullback_metric(Tensor::vector({1, 2})), cmf::DimensionError);
}

TEST_CASE("discrepancy examples") {
  const Tensor g = Tensor::matrix({{4, 0}, {0, 9}});
  CHECK(metric_discrepancy(g, g) == 0.0);
  CHECK(metric_discrepancy(g, Tensor::matrix({{4, 0}, {0, 4}})) == 5.0);
  Tensor ha(Shape{3, 2, 2});
  Tensor hb = ha;
  hb.at(1, 0, 1) = 3.0;
  CHECK(curvature_discrepancy(ha, hb) == 3.0);
  CHECK(curvature_discrepancy(ha, ha) == 0.0);
  CHECK_THROWS_AS(metric_discrepancy(g, Tensor::identity(3)), cmf::DimensionError);
  CHECK_THROWS_AS(curvature_discrepancy(ha, Tensor(Shape{2, 2, 2})), cmf::DimensionError);
}

TEST_CASE("discrepancies are metrics on random triples") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const Tensor a = random_tensor(rng, {2, 2}), b = random_tensor(rng, {2, 2}),
                 c = random_tensor(rng, {2, 2});
    CHECK(metric_discrepancy(a, b) >= 0.0);
    CHECK(metric_discrepancy(a, b) == metric_discrepancy(b, a));
    CHECK(metric_discrepancy(a, b) > 0.0);
    CHECK(metric_discrepancy(a, c) <= metric_discrepancy(a, b) + metric_discrepancy(b, c) + 1e-12);

    const Tensor ha = random_hessian(rng, 3, 2), hb = random_hessian(rng, 3, 2),
                 hc = random_hessian(rng, 3, 2);
    CHECK(curvature_discrepancy(ha, hb) >= 0.0);
    CHECK(curvature_discrepancy(ha, hb) == curvature_discrepancy(hb, ha));
    CHECK(curvature_discrepancy(ha, ha) == 0.0);
    CHECK(curvature_discrepancy(ha, hc) <=
          curvature_discrepancy(ha, hb) + curvature_discrepancy(hb, hc) + 1e-12);
  }
}

TEST_CASE("identity and linear decoders") {
  cmf::net::Mlp ident;
  ident.spec = {{2, 2}};
  ident.params.values = {1, 0, 0, 1, 0, 0};
  auto id_fn = cmf::net::as_vector_fn(ident.spec, ident.params);
  const GeometryBundle g = geometry_at(id_fn, Tensor::vector({0.4, -2.0}), DiffMode::exact());
  CHECK(g.G == Tensor::identity(2));
  CHECK(g.H == Tensor(Shape{2, 2, 2}));

  cmf::net::Mlp lin;
  lin.spec = {{2, 3}};
  lin.params.values = {1.5, -2, 0.25, 3, 0.5, -1, 0.1, 0.2, 0.3};
  auto lin_fn = cmf::net::as_vector_fn(lin.spec, lin.params);
  std::mt19937_64 rng(2);
  const GeometryBundle first = geometry_at(lin_fn, Tensor::vector({0, 0}), DiffMode::exact());
  for (int i = 0; i < 10; ++i) {
    const Tensor z = Tensor::vector(cmf::testing::uniform_vector(rng, 2, -3, 3));
    const GeometryBundle gz = geometry_at(lin_fn, z, DiffMode::exact());
    CHECK(gz.J == first.J);
    CHECK(gz.H == Tensor(Shape{3, 2, 2}));
    CHECK(cmf::diff::max_abs_diff(geometry_at(lin_fn, z, DiffMode::stencil(1e-3)).H, gz.H) < 1e-6);
  }
  CHECK(first.J == Tensor::matrix({{1.5, 3}, {-2, 0.5}, {0.25, -1}}));
}

TEST_CASE("geometry invariants on a network decoder") {
  ModelBundle m = ModelBundle::create(Architecture{}, 4);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Tensor z = Tensor::vector(cmf::testing::uniform_vector(rng, 2, -3, 3));
    const GeometryBundle g = geometry_at(m, z, DiffMode::exact());
    CHECK(cmf::diff::max_abs_diff(g.G, cmf::diff::matmul(g.J, g.J, true, false)) < 1e-12);
    CHECK(std::abs(g.G(0, 1) - g.G(1, 0)) < 1e-12);
    CHECK(min_eig2(g.G) >= -1e-9);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(g.H.at(k, 0, 1) - g.H.at(k, 1, 0)) < 1e-10);
  }
  CHECK_THROWS_AS(geometry_at(m, Tensor::vector({1, 2, 3}), DiffMode::exact()), cmf::DimensionError);
}

TEST_CASE("exact and stencil bundles agree") {
  ModelBundle m = ModelBundle::create(Architecture{}, 8);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const Tensor z = Tensor::vector(cmf::testing::uniform_vector(rng, 2, -3, 3));
    const GeometryBundle e = geometry_at(m, z, DiffMode::exact());
    const GeometryBundle s = geometry_at(m, z, DiffMode::stencil(1e-3));
    CHECK(cmf::diff::max_abs_diff(e.J, s.J) < 1e-4);
    CHECK(cmf::diff::max_abs_diff(e.H, s.H) < 1e-3);
  }
}

TEST_CASE("scaling the decoder by c scales G by c^2 and H by c") {
  ModelBundle m = ModelBundle::create(Architecture{}, 12);
  const auto dec = cmf::net::as_vector_fn(m.decoder.spec, m.decoder.params);
  const VectorFn scaled = [&](const Jet& z) { return cmf::diff::scale(dec(z), 2.0); };
  std::mt19937_64 rng(13);
  for (int i = 0; i < 10; ++i) {
    const Tensor z = Tensor::vector(cmf::testing::uniform_vector(rng, 2, -2, 2));
    const GeometryBundle a = geometry_at(dec, z, DiffMode::exact());
    const GeometryBundle b = geometry_at(scaled, z, DiffMode::exact());
    for (std::size_t k = 0; k < a.G.size(); ++k) CHECK(std::abs(b.G[k] - 4 * a.G[k]) < 1e-8);
    for (std::size_t k = 0; k < a.H.size(); ++k) CHECK(std::abs(b.H[k] - 2 * a.H[k]) < 1e-8);
  }
}

TEST_CASE("tape row discrepancies match the pointwise functions") {
  ModelBundle m = ModelBundle::create(Architecture{}, 21);
  const auto dec = cmf::net::as_vector_fn(m.decoder.spec, m.decoder.params);
  std::mt19937_64 rng(22);
  const std::size_t B = 7;
  const Tensor za(Shape{B, 2}, cmf::testing::uniform_vector(rng, 2 * B, -2, 2));
  const Tensor zb(Shape{B, 2}, cmf::testing::uniform_vector(rng, 2 * B, -2, 2));
  for (DiffMode mode : {DiffMode::exact(), DiffMode::stencil(1e-3, 1e-2)}) {
    cmf::diff::Tape tape;
    const Jet ja = cmf::diff::differentiate(dec, tape.constant(za), mode, 2);
    const Jet jb = cmf::diff::differentiate(dec, tape.constant(zb), mode, 2);
    const Tensor metric = metric_discrepancy_rows(ja, jb).value();
    const Tensor curv = curvature_discrepancy_rows(ja, jb).value();
    const Tensor metric_sq = metric_discrepancy_rows(ja, jb, true).value();
    CHECK(metric.rows() == B);
    CHECK(curv.cols() == 1);
    for (std::size_t r = 0; r < B; ++r) {
      const Tensor pa = Tensor::vector({za(r, 0), za(r, 1)});
      const Tensor pb = Tensor::vector({zb(r, 0), zb(r, 1)});
      const GeometryBundle ga = geometry_at(dec, pa, mode), gb = geometry_at(dec, pb, mode);
      const double md = metric_discrepancy(ga.G, gb.G);
      CHECK(std::abs(metric(r, 0) - md) < 1e-9 * std::max(1.0, md));
      CHECK(std::abs(metric_sq(r, 0) - md * md) < 1e-9 * std::max(1.0, md * md));
      const double cd = curvature_discrepancy(ga.H, gb.H);
      CHECK(std::abs(curv(r, 0) - cd) < 1e-9 * std::max(1.0, cd));
    }
  }
}

TEST_CASE("tape row discrepancies vanish on identical jets") {
  ModelBundle m = ModelBundle::create(Architecture{}, 3);
  const auto dec = cmf::net::as_vector_fn(m.decoder.spec, m.decoder.params);
  cmf::diff::Tape tape;
  const Jet j = cmf::diff::differentiate(dec, tape.constant(Tensor::matrix({{0.1, 0.2}, {1, -1}})),
                                         DiffMode::exact(), 2);
  CHECK(metric_discrepancy_rows(j, j).value() == Tensor(Shape{2, 1}));
  CHECK(curvature_discrepancy_rows(j, j).value() == Tensor(Shape{2, 1}));
}
