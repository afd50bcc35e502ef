#include <cmath>
#include <random>

#include "cmf/errors.hpp"
#include "cmf/jet.hpp"
#include "cmf/tape.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cmf::diff;
using cmf::testing::fd_gradient;
using cmf::testing::max_rel_error;
using cmf::testing::RefMlp;

namespace {

double eval_value(const ScalarFn& f, const std::vector<double>& p) {
  Tape t;
  Var x = t.leaf(Tensor::vector(p));
  return f(t, x).value()[0];
}

double gradient_error(const ScalarFn& f, const std::vector<double>& p) {
  Tensor g = grad_scalar(f, Tensor::vector(p));
  auto fd = fd_gradient([&](const std::vector<double>& q) { return eval_value(f, q); }, p);
  return max_rel_error(g.values(), fd);
}

VectorFn as_jet_fn(const RefMlp& m) {
  return [m](const Jet& z) {
    Tape& t = *z.value.tape;
    Jet x = z;
    for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
      Var w = t.constant(Tensor(Shape{m.widths[l], m.widths[l + 1]}, m.weights[l]));
      Var b = t.constant(Tensor(Shape{1, m.widths[l + 1]}, m.biases[l]));
      x = affine(x, w, b);
      if (l + 2 < m.widths.size()) x = activate(x, Activation::elu());
    }
    return x;
  };
}

VectorFn linear_fn(const Tensor& w_in_out) {
  return [w_in_out](const Jet& z) {
    Tape& t = *z.value.tape;
    return affine(z, t.constant(w_in_out), t.constant(Tensor(Shape{1, w_in_out.cols()})));
  };
}

}  // namespace

TEST_CASE("matmul examples") {
  CHECK(matmul(Tensor::identity(2), Tensor::identity(2)) == Tensor::identity(2));
  CHECK(matmul(Tensor::matrix({{2, 0}, {0, 3}}), Tensor::matrix({{1}, {1}})) ==
        Tensor::matrix({{2}, {3}}));
  Tensor z(Shape{2, 3});
  Tensor any = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  CHECK(matmul(z, any) == Tensor(Shape{2, 2}));
  CHECK_THROWS_AS(matmul(any, any), cmf::DimensionError);
}

TEST_CASE("transposed matmul matches explicit transpose") {
  std::mt19937_64 rng(3);
  Tensor a(Shape{4, 3}, cmf::testing::uniform_vector(rng, 12, -1, 1));
  Tensor b(Shape{4, 5}, cmf::testing::uniform_vector(rng, 20, -1, 1));
  Tensor c(Shape{5, 3}, cmf::testing::uniform_vector(rng, 15, -1, 1));
  CHECK(max_abs_diff(matmul(a, b, true, false), matmul(transpose(a), b)) < 1e-14);
  CHECK(max_abs_diff(matmul(b, c, false, false), matmul(b, transpose(c), false, true)) < 1e-14);
  Tensor d(Shape{5, 4}, cmf::testing::uniform_vector(rng, 20, -1, 1));
  CHECK(max_abs_diff(matmul(a, d, true, true), matmul(transpose(a), transpose(d))) < 1e-14);
}

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), cmf::DimensionError);
  Tensor s = Tensor::scalar(4.0);
  CHECK(s.size() == 1);
  CHECK(s.rank() == 0);
}

TEST_CASE("grad_scalar examples") {
  ScalarFn half_sq = [](Tape&, Var p) { return scale(sum(square(p)), 0.5); };
  Tensor g = grad_scalar(half_sq, Tensor::vector({1, 2}));
  CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(g.shape() == Shape{2});

  ScalarFn elu_sum = [](Tape&, Var p) { return sum(activate(p, Activation::elu())); };
  Tensor ge = grad_scalar(elu_sum, Tensor::vector({-1.0}));
  CHECK(ge[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
}

TEST_CASE("every primitive passes a finite-difference gradient check") {
  std::mt19937_64 rng(11);
  auto p = cmf::testing::uniform_vector(rng, 10, -2.0, 2.0);
  // Keep away from the ELU kink and from zero for sqrt.
  for (auto& v : p) if (std::abs(v) < 0.05) v += 0.1;

  auto mat = [](Var flat, std::size_t r, std::size_t c, std::size_t off = 0) {
    return view(flat, off, r, c);
  };
  const std::vector<std::pair<const char*, ScalarFn>> cases = {
      {"add", [&](Tape&, Var x) { return sum(square(mat(x, 1, 5) + mat(x, 1, 5, 5))); }},
      {"sub", [&](Tape&, Var x) { return sum(square(mat(x, 1, 5) - mat(x, 1, 5, 5))); }},
      {"mul", [&](Tape&, Var x) { return sum(mat(x, 1, 5) * mat(x, 1, 5, 5)); }},
      {"neg", [&](Tape&, Var x) { return sum(square(-x)); }},
      {"scale", [&](Tape&, Var x) { return sum(square(scale(x, 3.0))); }},
      {"add_scalar", [&](Tape&, Var x) { return sum(square(add_scalar(x, 0.7))); }},
      {"add_row", [&](Tape&, Var x) { return sum(square(add_row(mat(x, 2, 3), mat(x, 1, 3, 6)))); }},
      {"matmul", [&](Tape&, Var x) { return sum(square(matmul(mat(x, 2, 3), mat(x, 3, 1, 6)))); }},
      {"elu", [&](Tape&, Var x) { return sum(activate(x, Activation::elu())); }},
      {"elu'", [&](Tape&, Var x) { return sum(activate(x, Activation::elu(), 1)); }},
      {"elu''", [&](Tape&, Var x) { return sum(activate(x, Activation::elu(), 2)); }},
      {"softplus", [&](Tape&, Var x) { return sum(activate(x, Activation::softplus())); }},
      {"softplus'", [&](Tape&, Var x) { return sum(activate(x, Activation::softplus(), 1)); }},
      {"softplus''", [&](Tape&, Var x) { return sum(activate(x, Activation::softplus(), 2)); }},
      {"sqrt", [&](Tape&, Var x) { return sum(safe_sqrt(add_scalar(square(x), 0.3))); }},
      {"mean", [&](Tape&, Var x) { return mean(square(x)); }},
      {"row_sum", [&](Tape&, Var x) { return sum(square(row_sum(mat(x, 5, 2)))); }},
      {"column", [&](Tape&, Var x) { return sum(square(column(mat(x, 5, 2), 1))); }},
      {"slice_rows", [&](Tape&, Var x) { return sum(square(slice_rows(mat(x, 5, 2), 1, 3))); }},
      {"hconcat", [&](Tape&, Var x) {
         std::vector<Var> parts{mat(x, 2, 1), mat(x, 2, 3, 2)};
         return sum(square(matmul(hconcat(parts), mat(x, 4, 1, 6))));
       }},
      {"vconcat", [&](Tape&, Var x) {
         std::vector<Var> parts{mat(x, 1, 2), mat(x, 2, 2, 4)};
         return sum(square(matmul(vconcat(parts), mat(x, 2, 1, 8))));
       }},
      {"bce", [&](Tape&, Var x) {
         return bce_with_logits(x, Tensor::vector({0, 1, 1, 0, 1, 0, 0, 1, 1, 0}));
       }},
  };
  for (const auto& [name, f] : cases) {
    const std::string label = name;
    CAPTURE(label);
    CHECK(gradient_error(f, p) < 1e-6);
  }
}

TEST_CASE("bce clamps saturated probabilities") {
  Tape t;
  Var logits = t.leaf(Tensor::vector({50.0, 0.0}));
  Var loss = bce_with_logits(logits, Tensor::vector({0.0, 1.0}));
  const double expect = (-std::log(1e-7) + std::log(2.0)) / 2.0;
  CHECK(loss.value()[0] == doctest::Approx(expect).epsilon(1e-9));
  t.backward(loss);
  CHECK(t.grad(logits)[0] == 0.0);
  CHECK(t.grad(logits)[1] == doctest::Approx(-0.25));
}

TEST_CASE("non-finite values surface as errors naming the operation") {
  Tape t;
  Var big = t.leaf(Tensor::vector({1e308}));
  try {
    scale(big, 10.0);
    FAIL("expected NumericError");
  } catch (const cmf::NumericError& e) {
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
  CHECK_THROWS_AS(t.leaf(Tensor::vector({std::nan("")})), cmf::NumericError);
}

TEST_CASE("backward only reaches nodes connected to the root") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1.0, 2.0}));
  Var y = t.leaf(Tensor::vector({3.0}));
  Var unused = scale(y, 2.0);
  (void)unused;
  Var loss = sum(square(x));
  t.backward(loss);
  CHECK(t.grad(y)[0] == 0.0);
  CHECK(t.grad(x)[1] == 4.0);
}

TEST_CASE("input_jacobian examples") {
  Tensor w = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});  // in x out
  for (DiffMode mode : {DiffMode::exact(), DiffMode::stencil(1e-3)}) {
    Tensor j = input_jacobian(linear_fn(w), Tensor::vector({0.3, -1.2}), mode);
    CHECK(max_abs_diff(j, transpose(w)) < (mode.kind == DiffKind::Exact ? 0.0 : 1e-10) + 1e-15);
  }
  VectorFn elu1 = [](const Jet& z) { return activate(z, Activation::elu()); };
  Tensor je = input_jacobian(elu1, Tensor::vector({-1.0}), DiffMode::exact());
  CHECK(je(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
}

TEST_CASE("input_hessian examples") {
  Tensor w = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  Tensor h0 = input_hessian(linear_fn(w), Tensor::vector({0.5, 0.5}), DiffMode::exact());
  CHECK(h0 == Tensor(Shape{3, 2, 2}));

  VectorFn poly = [](const Jet& z) {
    Jet a = column(z, 0);
    Jet b = column(z, 1);
    return a * a + a * b;
  };
  for (DiffMode mode : {DiffMode::exact(), DiffMode::stencil(1e-2)}) {
    Tensor h = input_hessian(poly, Tensor::vector({0.7, -0.4}), mode);
    CHECK(h.at(0, 0, 0) == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(h.at(0, 0, 1) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(h.at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(h.at(0, 1, 1)) < 1e-8);
  }

  VectorFn elu1 = [](const Jet& z) { return activate(z, Activation::elu()); };
  Tensor he = input_hessian(elu1, Tensor::vector({-1.0}), DiffMode::exact());
  CHECK(he.at(0, 0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
}

TEST_CASE("exact and stencil derivatives agree on random ELU nets away from kinks") {
  std::mt19937_64 rng(2024);
  RefMlp ref = RefMlp::random({2, 8, 8, 3}, rng);
  VectorFn f = as_jet_fn(ref);
  std::uniform_real_distribution<double> coord(-3.0, 3.0);
  int accepted = 0;
  double worst_j = 0, worst_h = 0, worst_sym_exact = 0, worst_sym_stencil = 0;
  while (accepted < 100) {
    std::vector<double> z{coord(rng), coord(rng)};
    std::vector<double> pre;
    ref(z, &pre);
    if (std::any_of(pre.begin(), pre.end(), [](double s) { return std::abs(s) < 1e-2; })) continue;
    ++accepted;
    Tensor zt = Tensor::vector(z);
    worst_j = std::max(worst_j, max_abs_diff(input_jacobian(f, zt, DiffMode::exact()),
                                             input_jacobian(f, zt, DiffMode::stencil(1e-3))));
    Tensor he = input_hessian(f, zt, DiffMode::exact());
    Tensor hs = input_hessian(f, zt, DiffMode::stencil(1e-3));
    worst_h = std::max(worst_h, max_abs_diff(he, hs));
    for (std::size_t k = 0; k < 3; ++k) {
      worst_sym_exact = std::max(worst_sym_exact, std::abs(he.at(k, 0, 1) - he.at(k, 1, 0)));
      worst_sym_stencil = std::max(worst_sym_stencil, std::abs(hs.at(k, 0, 1) - hs.at(k, 1, 0)));
    }
  }
  CHECK(worst_j < 1e-4);
  CHECK(worst_h < 1e-3);
  CHECK(worst_sym_exact < 1e-10);
  CHECK(worst_sym_stencil < 1e-6);
}

TEST_CASE("jacobian matches forward finite differences of an independent evaluator") {
  std::mt19937_64 rng(5);
  RefMlp ref = RefMlp::random({2, 6, 3}, rng);
  VectorFn f = as_jet_fn(ref);
  std::vector<double> z{0.4, -0.9};
  Tensor j = input_jacobian(f, Tensor::vector(z), DiffMode::exact());
  for (std::size_t c = 0; c < 2; ++c) {
    auto up = z, down = z;
    up[c] += 1e-6;
    down[c] -= 1e-6;
    auto yu = ref(up), yd = ref(down);
    for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(j(r, c) - (yu[r] - yd[r]) / 2e-6) < 1e-6);
  }
}

TEST_CASE("linear nets have constant jacobian") {
  std::mt19937_64 rng(9);
  Tensor w(Shape{2, 3}, cmf::testing::uniform_vector(rng, 6, -2, 2));
  Tensor first = input_jacobian(linear_fn(w), Tensor::vector({0, 0}), DiffMode::exact());
  for (int i = 0; i < 10; ++i) {
    auto z = cmf::testing::uniform_vector(rng, 2, -5, 5);
    CHECK(input_jacobian(linear_fn(w), Tensor::vector(z), DiffMode::exact()) == first);
  }
}

TEST_CASE("stencil step validation") {
  CHECK_THROWS_AS(DiffMode::stencil(1e-7).validate(), cmf::ArgumentError);
  CHECK_THROWS_AS(DiffMode::stencil(0.5).validate(), cmf::ArgumentError);
  CHECK_NOTHROW(DiffMode::stencil(1e-6).validate());
  CHECK_NOTHROW(DiffMode::stencil(1e-3, 1e-2).validate());
}

TEST_CASE("gradient flows through every stencil evaluation") {
  // f(p) = sum of stencil Jacobian of z -> p0 * z^2 at z = p1; d/dp of 2*p0*p1.
  ScalarFn f = [](Tape& t, Var p) {
    Var z = view(p, 1, 1, 1);
    Var a = view(p, 0, 1, 1);
    VectorFn g = [a](const Jet& x) {
      Tape& tp = *x.value.tape;
      Var scale_row = a;
      // broadcast the 1x1 coefficient across the batch rows
      std::vector<Var> rows(x.value.rows(), scale_row);
      Var coeff = vconcat(rows);
      Jet c{coeff, {}, {}};
      if (x.order() >= 1) {
        Var zero = tp.constant(Tensor(Shape{x.value.rows(), 1}));
        c.d1.assign(x.input_dim(), zero);
        if (x.order() == 2) c.d2.assign(1, zero);
      }
      return c * x * x;
    };
    Jet j = differentiate(g, z, DiffMode::stencil(1e-3), 1);
    (void)t;
    return sum(j.d1[0]);
  };
  std::vector<double> p{1.5, 0.8};
  Tensor grad = grad_scalar(f, Tensor::vector(p));
  CHECK(grad[0] == doctest::Approx(2 * 0.8).epsilon(1e-9));
  CHECK(grad[1] == doctest::Approx(2 * 1.5).epsilon(1e-9));
  CHECK(gradient_error(f, p) < 1e-6);
}
