#include "cmf/jet.hpp"

#include <algorithm>

#include "cmf/errors.hpp"

namespace cmf::diff {
namespace {

void require_compatible(const Jet& a, const Jet& b, const char* op) {
  if (a.order() != b.order() || a.input_dim() != b.input_dim()) {
    throw DimensionError(std::string(op) + ": jets differ in order or input dimension");
  }
}

Tensor as_row(const Tensor& z) {
  if (z.rank() == 1) return z.reshaped(Shape{1, z.size()});
  if (z.rank() == 2 && z.rows() == 1) return z;
  throw DimensionError("expected a single point, got shape " + shape_string(z.shape()));
}

}  // namespace

void DiffMode::validate() const {
  if (kind == DiffKind::Exact) return;
  for (double h : {step, hessian_step}) {
    if (!(h >= 1e-6 && h <= 1e-1)) {
      throw ArgumentError("stencil step " + std::to_string(h) + " outside [1e-6, 1e-1]");
    }
  }
}

std::size_t pair_index(std::size_t i, std::size_t j, std::size_t dim) {
  if (i > j) std::swap(i, j);
  return i * dim - (i * (i - 1)) / 2 + (j - i);
}

Var Jet::second(std::size_t i, std::size_t j) const {
  if (order() < 2) throw ArgumentError("jet: second derivatives were not computed");
  return d2[pair_index(i, j, input_dim())];
}

Jet seed(Var z, int order) {
  Jet out{z, {}, {}};
  if (order <= 0) return out;
  const std::size_t b = z.rows();
  const std::size_t d = z.cols();
  Tape& t = *z.tape;
  for (std::size_t i = 0; i < d; ++i) {
    Tensor e(Shape{b, d});
    for (std::size_t r = 0; r < b; ++r) e(r, i) = 1.0;
    out.d1.push_back(t.constant(e));
  }
  if (order >= 2) {
    Var zero = t.constant(Tensor(Shape{b, d}));
    out.d2.assign(d * (d + 1) / 2, zero);
  }
  return out;
}

Jet primal(Var z) { return Jet{z, {}, {}}; }

Jet affine(const Jet& x, Var weight, Var bias) {
  Jet out{add_row(matmul(x.value, weight), bias), {}, {}};
  for (const Var& v : x.d1) out.d1.push_back(matmul(v, weight));
  for (const Var& v : x.d2) out.d2.push_back(matmul(v, weight));
  return out;
}

Jet activate(const Jet& x, const Activation& act) {
  Jet out{activate(x.value, act, 0), {}, {}};
  if (x.order() == 0) return out;
  Var slope = activate(x.value, act, 1);
  for (const Var& v : x.d1) out.d1.push_back(slope * v);
  if (x.order() == 2) {
    Var bend = activate(x.value, act, 2);
    const std::size_t d = x.input_dim();
    out.d2.resize(x.d2.size(), out.value);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        const std::size_t p = pair_index(i, j, d);
        out.d2[p] = bend * (x.d1[i] * x.d1[j]) + slope * x.d2[p];
      }
    }
  }
  return out;
}

Jet operator+(const Jet& a, const Jet& b) {
  require_compatible(a, b, "jet add");
  Jet out{a.value + b.value, {}, {}};
  for (std::size_t i = 0; i < a.d1.size(); ++i) out.d1.push_back(a.d1[i] + b.d1[i]);
  for (std::size_t i = 0; i < a.d2.size(); ++i) out.d2.push_back(a.d2[i] + b.d2[i]);
  return out;
}

Jet operator-(const Jet& a, const Jet& b) {
  require_compatible(a, b, "jet sub");
  Jet out{a.value - b.value, {}, {}};
  for (std::size_t i = 0; i < a.d1.size(); ++i) out.d1.push_back(a.d1[i] - b.d1[i]);
  for (std::size_t i = 0; i < a.d2.size(); ++i) out.d2.push_back(a.d2[i] - b.d2[i]);
  return out;
}

Jet operator*(const Jet& a, const Jet& b) {
  require_compatible(a, b, "jet mul");
  Jet out{a.value * b.value, {}, {}};
  const std::size_t d = a.input_dim();
  for (std::size_t i = 0; i < d; ++i) out.d1.push_back(a.d1[i] * b.value + a.value * b.d1[i]);
  if (a.order() == 2) {
    out.d2.resize(a.d2.size(), out.value);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        const std::size_t p = pair_index(i, j, d);
        out.d2[p] = a.d2[p] * b.value + a.d1[i] * b.d1[j] + a.d1[j] * b.d1[i] + a.value * b.d2[p];
      }
    }
  }
  return out;
}

Jet scale(const Jet& a, double c) {
  Jet out{scale(a.value, c), {}, {}};
  for (const Var& v : a.d1) out.d1.push_back(scale(v, c));
  for (const Var& v : a.d2) out.d2.push_back(scale(v, c));
  return out;
}

Jet column(const Jet& a, std::size_t j) {
  Jet out{column(a.value, j), {}, {}};
  for (const Var& v : a.d1) out.d1.push_back(column(v, j));
  for (const Var& v : a.d2) out.d2.push_back(column(v, j));
  return out;
}

Jet hconcat(std::span<const Jet> parts) {
  if (parts.empty()) throw DimensionError("jet hconcat: no operands");
  auto gather = [&](auto pick) {
    std::vector<Var> vs;
    vs.reserve(parts.size());
    for (const Jet& p : parts) vs.push_back(pick(p));
    return hconcat(vs);
  };
  for (const Jet& p : parts) require_compatible(parts[0], p, "jet hconcat");
  Jet out{gather([](const Jet& p) { return p.value; }), {}, {}};
  for (std::size_t i = 0; i < parts[0].d1.size(); ++i)
    out.d1.push_back(gather([i](const Jet& p) { return p.d1[i]; }));
  for (std::size_t i = 0; i < parts[0].d2.size(); ++i)
    out.d2.push_back(gather([i](const Jet& p) { return p.d2[i]; }));
  return out;
}

Jet differentiate(const VectorFn& f, Var z, const DiffMode& mode, int order) {
  if (order < 0 || order > 2) throw ArgumentError("differentiate: order must be in [0, 2]");
  mode.validate();
  if (mode.kind == DiffKind::Exact || order == 0) {
    Jet out = f(seed(z, order));
    if (out.order() != order) throw ArgumentError("differentiate: function dropped derivatives");
    return out;
  }

  // Stencil: evaluate f once on all shifted copies of z stacked row-wise.
  const std::size_t d = z.cols();
  const std::size_t b = z.rows();
  std::vector<std::vector<double>> offsets;
  auto offset_id = [&](std::vector<double> off) {
    auto it = std::find(offsets.begin(), offsets.end(), off);
    if (it != offsets.end()) return static_cast<std::size_t>(it - offsets.begin());
    offsets.push_back(std::move(off));
    return offsets.size() - 1;
  };
  auto shifted = [&](std::size_t i, double hi, std::size_t j, double hj) {
    std::vector<double> off(d, 0.0);
    off[i] += hi;
    off[j] += hj;
    return offset_id(std::move(off));
  };

  const double h1 = mode.step;
  const double h2 = mode.hessian_step;
  const std::size_t center = offset_id(std::vector<double>(d, 0.0));
  std::vector<std::pair<std::size_t, std::size_t>> first(d);
  for (std::size_t i = 0; i < d; ++i) first[i] = {shifted(i, h1, i, 0.0), shifted(i, -h1, i, 0.0)};
  struct Mixed {
    std::size_t pp, pm, mp, mm;
  };
  std::vector<Mixed> mixed;
  std::vector<std::pair<std::size_t, std::size_t>> diag(d);
  if (order == 2) {
    for (std::size_t i = 0; i < d; ++i) diag[i] = {shifted(i, h2, i, 0.0), shifted(i, -h2, i, 0.0)};
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        mixed.push_back({shifted(i, h2, j, h2), shifted(i, h2, j, -h2), shifted(i, -h2, j, h2),
                         shifted(i, -h2, j, -h2)});
  }

  Tape& t = *z.tape;
  std::vector<Var> stacked;
  stacked.reserve(offsets.size());
  for (const auto& off : offsets) {
    if (std::all_of(off.begin(), off.end(), [](double v) { return v == 0.0; })) {
      stacked.push_back(z);
    } else {
      stacked.push_back(add_row(z, t.constant(Tensor(Shape{1, d}, off))));
    }
  }
  Var all = stacked.size() == 1 ? stacked[0] : vconcat(stacked);
  Var y = f(primal(all)).value;
  auto at = [&](std::size_t id) { return slice_rows(y, id * b, b); };

  Jet out{at(center), {}, {}};
  for (std::size_t i = 0; i < d; ++i)
    out.d1.push_back(scale(at(first[i].first) - at(first[i].second), 0.5 / h1));
  if (order == 2) {
    out.d2.resize(d * (d + 1) / 2, out.value);
    const double inv_h2sq = 1.0 / (h2 * h2);
    for (std::size_t i = 0; i < d; ++i) {
      out.d2[pair_index(i, i, d)] =
          scale(at(diag[i].first) + at(diag[i].second) - scale(out.value, 2.0), inv_h2sq);
    }
    std::size_t m = 0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i + 1; j < d; ++j, ++m) {
        const Mixed& s = mixed[m];
        out.d2[pair_index(i, j, d)] =
            scale(at(s.pp) - at(s.pm) - at(s.mp) + at(s.mm), 0.25 * inv_h2sq);
      }
    }
  }
  return out;
}

Tensor input_jacobian(const VectorFn& f, const Tensor& z, const DiffMode& mode) {
  Tape tape;
  Var zv = tape.constant(as_row(z));
  Jet jet = differentiate(f, zv, mode, 1);
  const std::size_t d_in = jet.input_dim();
  const std::size_t d_out = jet.value.cols();
  Tensor jac(Shape{d_out, d_in});
  for (std::size_t j = 0; j < d_in; ++j)
    for (std::size_t i = 0; i < d_out; ++i) jac(i, j) = jet.d1[j].value()(0, i);
  return jac;
}

Tensor input_hessian(const VectorFn& f, const Tensor& z, const DiffMode& mode) {
  Tape tape;
  Var zv = tape.constant(as_row(z));
  Jet jet = differentiate(f, zv, mode, 2);
  const std::size_t d_in = jet.input_dim();
  const std::size_t d_out = jet.value.cols();
  Tensor hess(Shape{d_out, d_in, d_in});
  for (std::size_t i = 0; i < d_in; ++i) {
    for (std::size_t j = i; j < d_in; ++j) {
      const Tensor& h = jet.second(i, j).value();
      for (std::size_t k = 0; k < d_out; ++k) {
        hess.at(k, i, j) = h(0, k);
        hess.at(k, j, i) = h(0, k);
      }
    }
  }
  return hess;
}

}  // namespace cmf::diff
